CRITERION_DESCRIPTIONS = {
    "c01": "metric reproduction, Group-I confusion matrix",
    "c02": "metric reproduction, Group-II confusion matrix",
    "c03": "loss suite: focal/BCE equivalence, oracle match, gradient check",
    "c04": "overfit probe: desk U-Net reaches dice >= 0.95",
    "c05": "frozen-encoder invariance and count swap",
    "c06": "infection map: V-preservation, hiding rule, jet endpoints",
    "c07": "detection rule equals brute-force scan with exact boundaries",
    "c08": "fold plan stratification at published catalog sizes",
    "c09": "confidence-interval formula",
    "c10": "Grad-CAM gradients, non-negativity, linear-toy proportionality",
    "c11": "annotation loop end-to-end with scripted oracle reviewers",
}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = {}
    for status in ("passed", "failed"):
        for rep in terminalreporter.stats.get(status, []):
            if "test_acceptance" not in rep.nodeid or rep.when != "call":
                continue
            name = rep.nodeid.split("::")[-1]
            key = name.split("_")[1] if "_" in name else name
            if key in CRITERION_DESCRIPTIONS:
                lines[key] = status.upper()
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(CRITERION_DESCRIPTIONS):
        status = lines.get(key, "NOT RUN")
        terminalreporter.write_line(
            f"criterion {key[1:]:>2}: {status:<8} {CRITERION_DESCRIPTIONS[key]}"
        )
