/** Browser bootstrap: restore the session named in the URL or start fresh. */

import { ApiClient } from "./api.js";
import { App } from "./app.js";

const root = document.getElementById("app");
if (root) {
  const base = root.dataset.apiBase ?? "";
  const sessionId = new URLSearchParams(window.location.search).get("session") ?? undefined;
  const app = new App(new ApiClient(base), root);
  void app.start(sessionId);
}
