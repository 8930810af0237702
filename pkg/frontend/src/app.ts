/*
 * Review queue front end. Every view is rebuilt from the review service on
 * demand; the only state held here is the current page of pending items and
 * the form for the item being worked on, so a hard refresh reproduces the
 * same view.
 */

import { AlreadyResolvedError, ApiError, ReviewApi } from "./api.js";
import {
  escapeHtml,
  highlightEvidence,
  LabelFormState,
  LOCATION_CLASSES,
  toQueueRows,
} from "./state.js";
import type { ToggleClass } from "./state.js";
import type { QueueStats, ReviewItem } from "./types.js";

const PAGE_SIZE = 50;
const ALL_CLASSES: ToggleClass[] = [...LOCATION_CLASSES, "abnormal"];

const api = new ReviewApi();

let page = 1;
let total = 0;
let items: ReviewItem[] = [];
let activeForm: { dirty: boolean } | null = null;
let submitting = false;
let retryAction: () => void = () => {};

const statsEl = document.getElementById("stats") as HTMLElement;
const bannerEl = document.getElementById("banner") as HTMLElement;
const bannerTextEl = document.getElementById("banner-text") as HTMLElement;
const bannerRetryBtn = document.getElementById("banner-retry") as HTMLButtonElement;
const listEl = document.getElementById("queue-list") as HTMLUListElement;
const pageInfoEl = document.getElementById("page-info") as HTMLElement;
const prevBtn = document.getElementById("prev-page") as HTMLButtonElement;
const nextBtn = document.getElementById("next-page") as HTMLButtonElement;
const detailEl = document.getElementById("detail") as HTMLElement;

function errText(err: unknown): string {
  if (err instanceof ApiError) {
    return err.status > 0 ? `${err.message} (HTTP ${err.status})` : err.message;
  }
  return String(err);
}

function showBanner(message: string, retry: () => void): void {
  bannerTextEl.textContent = message;
  retryAction = retry;
  bannerEl.classList.remove("hidden");
}

function hideBanner(): void {
  bannerEl.classList.add("hidden");
}

function kindLabel(kind: string): string {
  if (kind === "ResidualDescription") {
    return "residual";
  }
  if (kind === "MatchConflict") {
    return "conflict";
  }
  return "qc";
}

function confirmDiscard(): boolean {
  if (activeForm && activeForm.dirty) {
    return window.confirm("Discard unsubmitted edits on this item?");
  }
  return true;
}

function renderStats(stats: QueueStats): void {
  statsEl.textContent = `pending ${stats.pending} · resolved ${stats.resolved}`;
}

function renderList(): void {
  listEl.innerHTML = "";
  for (const row of toQueueRows(items)) {
    const li = document.createElement("li");
    li.className = "queue-row";
    const badge = document.createElement("span");
    badge.className = `badge badge-${kindLabel(row.kind)}`;
    badge.textContent = kindLabel(row.kind);
    const snippet = document.createElement("span");
    snippet.className = "snippet";
    snippet.lang = "vi";
    snippet.textContent = row.snippet || "(no description)";
    const when = document.createElement("span");
    when.className = "when";
    when.textContent = row.createdAt;
    li.append(badge, snippet, when);
    li.addEventListener("click", () => {
      void openItem(row.itemId);
    });
    listEl.appendChild(li);
  }
  const pages = Math.max(1, Math.ceil(total / PAGE_SIZE));
  pageInfoEl.textContent = `page ${page} of ${pages} · ${total} pending`;
  prevBtn.disabled = page <= 1;
  nextBtn.disabled = page >= pages;
}

async function refresh(): Promise<void> {
  try {
    const [stats, queue] = await Promise.all([
      api.stats(),
      api.queue("pending", page, PAGE_SIZE),
    ]);
    items = queue.items;
    total = queue.total;
    hideBanner();
    renderStats(stats);
    renderList();
  } catch (err) {
    // whatever list is already on screen stays there
    showBanner(errText(err), () => {
      void refresh();
    });
  }
}

function detailHeader(item: ReviewItem): string {
  const label = kindLabel(item.kind);
  const uid = item.payload.study_uid ?? "";
  return `
    <div class="detail-head">
      <span class="badge badge-${label}">${label}</span>
      <span class="uid">${escapeHtml(uid)}</span>
      <span class="when">${escapeHtml(item.created_at)}</span>
    </div>`;
}

function renderResolved(item: ReviewItem, notice?: string): void {
  activeForm = null;
  const fields = Object.entries(item.resolution ?? {})
    .map(
      ([key, value]) =>
        `<div><b>${escapeHtml(key)}</b>: ${escapeHtml(JSON.stringify(value))}</div>`,
    )
    .join("");
  detailEl.innerHTML = `
    ${detailHeader(item)}
    ${notice ? `<p class="notice">${escapeHtml(notice)}</p>` : ""}
    <p>Resolved by <b>${escapeHtml(item.annotator ?? "?")}</b>
       at ${escapeHtml(item.resolved_at ?? "?")}.</p>
    <div class="resolution">${fields}</div>`;
}

function renderLabelForm(item: ReviewItem): void {
  const stored = item.kind === "QcAudit" ? (item.payload.labels ?? {}) : {};
  const initial: Partial<Record<ToggleClass, number>> = {};
  for (const cls of ALL_CLASSES) {
    const value = stored[cls];
    if (typeof value === "number") {
      initial[cls] = value;
    }
  }
  const state = new LabelFormState(initial);

  const description = item.payload.description ?? "";
  const keywords = (item.payload.evidence ?? []).map(([, keyword]) => keyword);
  const descriptionHtml = keywords.length
    ? highlightEvidence(description, keywords)
    : escapeHtml(description);

  const toggles = ALL_CLASSES.map(
    (cls) =>
      `<label class="toggle">
         <input type="checkbox" data-cls="${cls}"${state.isOn(cls) ? " checked" : ""}>
         ${cls}
       </label>`,
  ).join("");

  detailEl.innerHTML = `
    ${detailHeader(item)}
    <p class="description" lang="vi">${descriptionHtml}</p>
    <form id="label-form">
      <div class="toggles">${toggles}</div>
      <label class="annotator">annotator
        <input type="text" id="annotator" autocomplete="off">
      </label>
      <p id="form-problem" class="problem hidden"></p>
      <button type="submit" id="submit-button">Submit labels</button>
    </form>`;

  const formEl = document.getElementById("label-form") as HTMLFormElement;
  const problemEl = document.getElementById("form-problem") as HTMLElement;
  const annotatorEl = document.getElementById("annotator") as HTMLInputElement;
  const boxes = Array.from(
    formEl.querySelectorAll<HTMLInputElement>("input[type=checkbox]"),
  );

  // Checkboxes always re-render from state, so a forced abnormal toggle or
  // a refused switch-off shows up immediately.
  const syncBoxes = () => {
    for (const box of boxes) {
      box.checked = state.isOn(box.dataset.cls as ToggleClass);
    }
  };
  for (const box of boxes) {
    box.addEventListener("change", () => {
      state.setToggle(box.dataset.cls as ToggleClass, box.checked);
      syncBoxes();
    });
  }
  annotatorEl.addEventListener("input", () => {
    state.setAnnotator(annotatorEl.value);
  });
  formEl.addEventListener("submit", (ev) => {
    ev.preventDefault();
    void submitLabels(item, state, problemEl);
  });
  activeForm = state;
}

async function submitLabels(
  item: ReviewItem,
  state: LabelFormState,
  problemEl: HTMLElement,
): Promise<void> {
  if (submitting) {
    return;
  }
  const problem = state.validate();
  if (problem !== null) {
    problemEl.textContent = problem;
    problemEl.classList.remove("hidden");
    return;
  }
  problemEl.classList.add("hidden");
  submitting = true;
  const button = document.getElementById("submit-button") as HTMLButtonElement | null;
  if (button) {
    button.disabled = true;
  }
  try {
    const resolved = await api.submitLabels(item.item_id, state.payload());
    renderResolved(resolved);
    await refresh();
  } catch (err) {
    if (err instanceof AlreadyResolvedError) {
      await showCurrentResolution(item.item_id);
      await refresh();
    } else {
      if (button) {
        button.disabled = false;
      }
      showBanner(errText(err), () => {
        void submitLabels(item, state, problemEl);
      });
    }
  } finally {
    submitting = false;
  }
}

function renderConflictForm(item: ReviewItem): void {
  const state = { dirty: false };
  const candidates = item.payload.candidates ?? [];
  const rows = candidates
    .map(
      (candidate) =>
        `<label class="candidate">
           <input type="radio" name="report" value="${escapeHtml(candidate.report_id)}">
           <span class="report-id">${escapeHtml(candidate.report_id)}</span>
           <span class="when">${escapeHtml(candidate.report_time)}</span>
           <span class="description" lang="vi">${escapeHtml(candidate.description)}</span>
         </label>`,
    )
    .join("");

  detailEl.innerHTML = `
    ${detailHeader(item)}
    <p>Several reports fall inside this study's window. Pick the one that
       belongs to it.</p>
    <form id="conflict-form">
      <div class="candidates">${rows}</div>
      <label class="annotator">annotator
        <input type="text" id="annotator" autocomplete="off">
      </label>
      <p id="form-problem" class="problem hidden"></p>
      <button type="submit" id="submit-button">Assign report</button>
    </form>`;

  const formEl = document.getElementById("conflict-form") as HTMLFormElement;
  const problemEl = document.getElementById("form-problem") as HTMLElement;
  const annotatorEl = document.getElementById("annotator") as HTMLInputElement;
  formEl.addEventListener("change", () => {
    state.dirty = true;
  });
  formEl.addEventListener("submit", (ev) => {
    ev.preventDefault();
    const picked = formEl.querySelector<HTMLInputElement>(
      "input[name=report]:checked",
    );
    const annotator = annotatorEl.value.trim();
    let problem: string | null = null;
    if (picked === null) {
      problem = "pick one of the candidate reports";
    } else if (annotator === "") {
      problem = "annotator name is required";
    }
    if (problem !== null) {
      problemEl.textContent = problem;
      problemEl.classList.remove("hidden");
      return;
    }
    problemEl.classList.add("hidden");
    void submitMatch(item, (picked as HTMLInputElement).value, annotator);
  });
  activeForm = state;
}

async function submitMatch(
  item: ReviewItem,
  reportId: string,
  annotator: string,
): Promise<void> {
  if (submitting) {
    return;
  }
  submitting = true;
  const button = document.getElementById("submit-button") as HTMLButtonElement | null;
  if (button) {
    button.disabled = true;
  }
  try {
    const resolved = await api.submitMatch(item.item_id, reportId, annotator);
    renderResolved(resolved);
    await refresh();
  } catch (err) {
    if (err instanceof AlreadyResolvedError) {
      await showCurrentResolution(item.item_id);
      await refresh();
    } else {
      if (button) {
        button.disabled = false;
      }
      showBanner(errText(err), () => {
        void submitMatch(item, reportId, annotator);
      });
    }
  } finally {
    submitting = false;
  }
}

async function showCurrentResolution(itemId: string): Promise<void> {
  try {
    const current = await api.item(itemId);
    renderResolved(
      current,
      "Someone already resolved this item; showing the recorded resolution.",
    );
  } catch (err) {
    showBanner(errText(err), () => {
      void showCurrentResolution(itemId);
    });
  }
}

function renderDetail(item: ReviewItem): void {
  if (item.status === "resolved") {
    renderResolved(item);
  } else if (item.kind === "MatchConflict") {
    renderConflictForm(item);
  } else {
    renderLabelForm(item);
  }
}

async function openItem(itemId: string): Promise<void> {
  if (!confirmDiscard()) {
    return;
  }
  activeForm = null;
  try {
    const item = await api.item(itemId);
    hideBanner();
    renderDetail(item);
  } catch (err) {
    showBanner(errText(err), () => {
      void openItem(itemId);
    });
  }
}

bannerRetryBtn.addEventListener("click", () => {
  retryAction();
});
prevBtn.addEventListener("click", () => {
  if (page > 1 && confirmDiscard()) {
    page -= 1;
    activeForm = null;
    void refresh();
  }
});
nextBtn.addEventListener("click", () => {
  if (confirmDiscard()) {
    page += 1;
    activeForm = null;
    void refresh();
  }
});
window.addEventListener("beforeunload", (ev) => {
  if (activeForm && activeForm.dirty) {
    ev.preventDefault();
    ev.returnValue = "";
  }
});

void refresh();
