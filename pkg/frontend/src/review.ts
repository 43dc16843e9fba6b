/**
 * Expert review board.
 *
 * An expert opens one package of submitted tasks, marks each member
 * confirmed or rejected, and files the verdicts in one shot. The
 * accuracy counter updates live as verdicts land; the package passes at
 * the 95% line, and a failed package is flagged as requeued. A package
 * reviewed by someone else in the meantime surfaces as a conflict and
 * the board reloads.
 */

import type { Api } from "./api.js";
import { ApiError } from "./api.js";
import { clear, el } from "./dom.js";
import { Metrics, ReviewPackage, Task } from "./schema.js";

export interface ReviewBoardOptions {
  api: Api;
  root: HTMLElement;
  expertId: string;
}

interface Row {
  task: Task;
  verdict: boolean | null;
}

export class ReviewBoard {
  private readonly api: Api;
  private readonly root: HTMLElement;
  private readonly doc: Document;
  private readonly expertId: string;

  private pkg: ReviewPackage | null = null;
  private rows: Row[] = [];
  private inflight: Promise<void> = Promise.resolve();

  constructor(opts: ReviewBoardOptions) {
    this.api = opts.api;
    this.root = opts.root;
    this.doc = opts.root.ownerDocument;
    this.expertId = opts.expertId;
  }

  start(): Promise<void> {
    return this.track(() => this.loadBoard());
  }

  settle(): Promise<void> {
    return this.inflight;
  }

  private track(op: () => Promise<void>): Promise<void> {
    this.inflight = this.inflight.then(op).catch(err => {
      console.error("review board:", err);
      this.banner("error", String(err instanceof Error ? err.message : err));
    });
    return this.inflight;
  }

  // -- board --------------------------------------------------------------

  private async loadBoard(note?: string): Promise<void> {
    this.pkg = null;
    this.rows = [];
    const packages = await this.api.openPackages();
    const metrics = await this.api.metrics().catch(() => null);
    this.renderBoard(packages, metrics);
    if (note) this.banner("warn", note);
  }

  private async openPackage(packageId: string): Promise<void> {
    const pkg = await this.api.getPackage(packageId);
    const tasks = await Promise.all(pkg.task_ids.map(id => this.api.getTask(id)));
    this.pkg = pkg;
    this.rows = tasks.map(task => ({ task, verdict: null }));
    this.renderPackage();
  }

  // -- reviewing ----------------------------------------------------------

  private async submitReview(): Promise<void> {
    if (!this.pkg) return;
    if (this.rows.some(r => r.verdict === null)) {
      this.banner("warn", "Decide every task before filing the review.");
      return;
    }
    const verdicts = this.rows.map(r => r.verdict === true);
    let reviewed: ReviewPackage;
    try {
      reviewed = await this.api.review(this.pkg.package_id, this.expertId, verdicts);
    } catch (err) {
      await this.handleReviewError(err);
      return;
    }
    this.renderOutcome(reviewed);
  }

  private async handleReviewError(err: unknown): Promise<void> {
    if (err instanceof ApiError && err.status === 400) {
      // Someone else settled this package while we were marking it.
      await this.loadBoard(
        `Review conflict: ${err.message}. The board has been refreshed.`);
      return;
    }
    if (err instanceof ApiError) {
      this.banner("error", `${err.type}: ${err.message}`);
      return;
    }
    this.banner("warn",
      "Could not reach the service. Your verdicts are still here; retry in a moment.",
      [{ id: "retry-review", label: "Retry", onClick: () => this.track(() => this.submitReview()) }]);
  }

  private setVerdict(index: number, verdict: boolean): void {
    const row = this.rows[index];
    if (!row) return;
    row.verdict = verdict;
    const li = this.root.querySelectorAll<HTMLElement>(".review-row")[index];
    if (li) {
      li.classList.toggle("verdict-true", verdict);
      li.classList.toggle("verdict-false", !verdict);
      li.querySelector(".confirm")?.classList.toggle("chosen", verdict);
      li.querySelector(".reject")?.classList.toggle("chosen", !verdict);
    }
    this.updateCounter();
  }

  private confirmRemaining(): void {
    this.rows.forEach((row, i) => {
      if (row.verdict === null) this.setVerdict(i, true);
    });
  }

  private updateCounter(): void {
    const counter = this.root.querySelector<HTMLElement>("#accuracy");
    if (!counter) return;
    const total = this.rows.length;
    const confirmed = this.rows.filter(r => r.verdict === true).length;
    const rejected = this.rows.filter(r => r.verdict === false).length;
    const undecided = total - confirmed - rejected;
    const pct = total ? ((confirmed / total) * 100).toFixed(1) : "0.0";
    counter.textContent =
      `${confirmed} confirmed · ${rejected} rejected · ${undecided} undecided` +
      ` — accuracy ${confirmed}/${total} (${pct}%)`;
    const submit = this.root.querySelector<HTMLButtonElement>("#submit-review");
    if (submit) submit.disabled = undecided > 0;
  }

  // -- rendering ----------------------------------------------------------

  private renderBoard(packages: ReviewPackage[], metrics: Metrics | null): void {
    clear(this.root);
    const box = el(this.doc, "div", "board");
    box.id = "board";
    box.appendChild(el(this.doc, "h2", "", "Review board"));
    if (metrics) {
      const states = Object.entries(metrics.states)
        .map(([k, v]) => `${k} ${v}`).join(" · ");
      box.appendChild(el(this.doc, "p", "metrics", states));
    }
    if (packages.length === 0) {
      box.appendChild(el(this.doc, "p", "", "No open packages."));
    } else {
      const list = el(this.doc, "div", "pkg-list");
      for (const pkg of packages) {
        const item = el(this.doc, "button", "pkg-item",
          `${pkg.package_id} — ${pkg.task_ids.length} tasks`);
        item.dataset.packageId = pkg.package_id;
        item.addEventListener("click", () => this.track(() => this.openPackage(pkg.package_id)));
        list.appendChild(item);
      }
      box.appendChild(list);
    }
    const refresh = el(this.doc, "button", "", "Refresh");
    refresh.id = "refresh";
    refresh.addEventListener("click", () => this.track(() => this.loadBoard()));
    box.appendChild(refresh);
    const slot = el(this.doc, "div", "banner");
    slot.id = "banner";
    box.appendChild(slot);
    this.root.appendChild(box);
  }

  private renderPackage(): void {
    const pkg = this.pkg!;
    clear(this.root);
    const box = el(this.doc, "div", "package");
    box.dataset.packageId = pkg.package_id;
    box.appendChild(el(this.doc, "h2", "", `Reviewing ${pkg.package_id}`));
    box.appendChild(el(this.doc, "p", "meta",
      `${this.rows.length} submitted tasks. The package passes at 95% confirmed.`));
    const counter = el(this.doc, "p", "counter");
    counter.id = "accuracy";
    box.appendChild(counter);

    const list = el(this.doc, "ol", "review-rows");
    this.rows.forEach((row, i) => list.appendChild(this.buildRow(row, i)));
    box.appendChild(list);

    const confirmRest = el(this.doc, "button", "", "Confirm the rest");
    confirmRest.id = "confirm-rest";
    confirmRest.addEventListener("click", () => this.confirmRemaining());
    box.appendChild(confirmRest);

    const submit = el(this.doc, "button", "primary", "File review");
    submit.id = "submit-review";
    submit.disabled = true;
    submit.addEventListener("click", () => this.track(() => this.submitReview()));
    box.appendChild(submit);

    const back = el(this.doc, "button", "", "Back to board");
    back.id = "back-board";
    back.addEventListener("click", () => this.track(() => this.loadBoard()));
    box.appendChild(back);

    const slot = el(this.doc, "div", "banner");
    slot.id = "banner";
    box.appendChild(slot);
    this.root.appendChild(box);
    this.updateCounter();
  }

  private buildRow(row: Row, index: number): HTMLElement {
    const li = el(this.doc, "li", "review-row");
    li.dataset.taskId = row.task.task_id;
    const summary = el(this.doc, "div", "summary", this.describe(row.task));
    li.appendChild(summary);
    const confirm = el(this.doc, "button", "confirm", "Confirm");
    confirm.addEventListener("click", () => this.setVerdict(index, true));
    const reject = el(this.doc, "button", "reject", "Reject");
    reject.addEventListener("click", () => this.setVerdict(index, false));
    li.appendChild(confirm);
    li.appendChild(reject);
    return li;
  }

  private describe(task: Task): string {
    const result = task.result ?? {};
    if (task.kind === "tag_filter") {
      const shown = task.payload.candidates;
      const kept = Array.isArray((result as { selected?: unknown }).selected)
        ? (result as { selected: string[] }).selected : [];
      const rejected = shown.filter(t => !kept.includes(t));
      const tail = rejected.length ? `rejected [${rejected.join(", ")}]` : "kept all";
      return `${task.region_id} · tags: kept [${kept.join(", ")}] · ${tail}`;
    }
    if (task.payload.stage === 2) {
      const text = (result as { correction?: unknown }).correction;
      return `${task.region_id} · "${task.payload.q}" · correction: "${String(text ?? "")}"`;
    }
    const outcome = (result as { outcome?: unknown }).outcome;
    const corr = (result as { correction?: unknown }).correction;
    const tail = typeof corr === "string" && corr ? ` ("${corr}")` : "";
    return `${task.region_id} · "${task.payload.q}" → ${String(outcome ?? "?")}${tail}`;
  }

  private renderOutcome(pkg: ReviewPackage): void {
    clear(this.root);
    const box = el(this.doc, "div", "outcome");
    box.dataset.state = pkg.state;
    box.appendChild(el(this.doc, "h2", "", `Package ${pkg.package_id} ${pkg.state}`));
    const pct = pkg.accuracy === null ? "?" : `${(pkg.accuracy * 100).toFixed(1)}%`;
    box.appendChild(el(this.doc, "p", "", `Confirmed accuracy: ${pct}.`));
    if (pkg.state === "failed") {
      box.appendChild(el(this.doc, "p", "requeued",
        "All member tasks were requeued for different annotators."));
    }
    const back = el(this.doc, "button", "", "Back to board");
    back.id = "back-board";
    back.addEventListener("click", () => this.track(() => this.loadBoard()));
    box.appendChild(back);
    const slot = el(this.doc, "div", "banner");
    slot.id = "banner";
    box.appendChild(slot);
    this.root.appendChild(box);
  }

  private banner(
    kind: "info" | "warn" | "error",
    text: string,
    actions: Array<{ id: string; label: string; onClick: () => void }> = [],
  ): void {
    let slot = this.root.querySelector<HTMLElement>("#banner");
    if (!slot) {
      slot = el(this.doc, "div", "banner");
      slot.id = "banner";
      this.root.appendChild(slot);
    }
    clear(slot);
    slot.className = `banner banner-${kind}`;
    slot.appendChild(el(this.doc, "span", "", text));
    for (const a of actions) {
      const btn = el(this.doc, "button", "banner-action", a.label);
      btn.id = a.id;
      btn.addEventListener("click", a.onClick);
      slot.appendChild(btn);
    }
  }
}
