import { HttpClient } from "./api.js";
import { createApp } from "./app.js";

function reviewerId(): string {
  let id = localStorage.getItem("cxrinf_reviewer_id");
  if (!id) {
    id = window.prompt("Reviewer id:") || `reviewer-${Math.random().toString(36).slice(2, 8)}`;
    localStorage.setItem("cxrinf_reviewer_id", id);
  }
  return id;
}

const root = document.getElementById("app");
if (root) {
  const app = createApp({ root, client: new HttpClient(), reviewerId: reviewerId() });
  void app.start();
}
