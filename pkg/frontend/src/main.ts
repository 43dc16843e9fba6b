/**
 * Browser entry point.
 *
 * Route and identity come from the URL so the client itself stays
 * stateless:
 *
 *   index.html?worker=ann-7#workbench          annotator console
 *   index.html?expert=exp-2#review             expert review board
 *   ...&api=http://host:8081&token=SECRET      service location and bearer token
 *
 * With no ?api= the service is assumed to share the page's origin.
 */

import { ApiClient } from "./api.js";
import { ReviewBoard } from "./review.js";
import { Workbench } from "./workbench.js";

function boot(): void {
  const params = new URLSearchParams(window.location.search);
  const api = new ApiClient({
    baseUrl: params.get("api") ?? "",
    token: params.get("token") ?? undefined,
  });
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app mount point");
  const view = window.location.hash.replace(/^#/, "") || "workbench";
  if (view === "review") {
    void new ReviewBoard({ api, root, expertId: params.get("expert") ?? "expert" }).start();
  } else {
    void new Workbench({ api, root, workerId: params.get("worker") ?? "worker" }).start();
  }
  window.addEventListener("hashchange", () => window.location.reload());
}

if (typeof document !== "undefined") boot();
