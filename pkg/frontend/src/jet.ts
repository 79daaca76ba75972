/**
 * Piecewise-linear jet colormap, identical to the server-side renderer so the
 * overlay a reviewer sees matches the exported infection maps:
 *   r = clip(1.5 - |4v - 3|), g = clip(1.5 - |4v - 2|), b = clip(1.5 - |4v - 1|).
 */
export function jetColor(v: number): [number, number, number] {
  const clip = (x: number) => Math.min(1, Math.max(0, x));
  return [
    clip(1.5 - Math.abs(4 * v - 3)),
    clip(1.5 - Math.abs(4 * v - 2)),
    clip(1.5 - Math.abs(4 * v - 1)),
  ];
}
