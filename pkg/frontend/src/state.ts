import type { ItemKind, LabelPayload, ReviewItem } from "./types.js";

export const LOCATION_CLASSES = [
  "chest_wall",
  "pleura",
  "parenchyma",
  "cardio",
] as const;

export type LocationClass = (typeof LOCATION_CLASSES)[number];
export type ToggleClass = LocationClass | "abnormal";

/**
 * Form state for resolving an item with labels: five binary toggles plus the
 * annotator name. The transition rules keep the server's invariant true at
 * every step, so a payload built from this state can never have abnormal=0
 * while a location class is set:
 *
 *  - turning any location class ON forces abnormal ON
 *  - abnormal refuses to turn OFF while a location class is ON
 */
export class LabelFormState {
  private flags: Record<ToggleClass, 0 | 1>;
  annotator = "";
  dirty = false;

  constructor(initial?: Partial<Record<ToggleClass, number>>) {
    this.flags = {
      chest_wall: 0,
      pleura: 0,
      parenchyma: 0,
      cardio: 0,
      abnormal: 0,
    };
    if (initial) {
      for (const cls of LOCATION_CLASSES) {
        if (initial[cls]) {
          this.flags[cls] = 1;
        }
      }
      if (initial.abnormal || this.anyLocationOn()) {
        this.flags.abnormal = 1;
      }
    }
  }

  isOn(cls: ToggleClass): boolean {
    return this.flags[cls] === 1;
  }

  anyLocationOn(): boolean {
    return LOCATION_CLASSES.some((cls) => this.flags[cls] === 1);
  }

  /**
   * Apply a toggle. Returns false when the request is refused (switching
   * abnormal off while a location class is still on); the caller should
   * re-render the checkbox from state in that case.
   */
  setToggle(cls: ToggleClass, on: boolean): boolean {
    if (cls === "abnormal" && !on && this.anyLocationOn()) {
      return false;
    }
    this.flags[cls] = on ? 1 : 0;
    if (on && cls !== "abnormal") {
      this.flags.abnormal = 1;
    }
    this.dirty = true;
    return true;
  }

  setAnnotator(name: string): void {
    if (name !== this.annotator) {
      this.annotator = name;
      this.dirty = true;
    }
  }

  /** Human-readable problem with the form, or null when submittable. */
  validate(): string | null {
    if (this.annotator.trim() === "") {
      return "annotator name is required";
    }
    return null;
  }

  payload(): LabelPayload {
    const problem = this.validate();
    if (problem !== null) {
      throw new Error(problem);
    }
    return {
      chest_wall: this.flags.chest_wall,
      pleura: this.flags.pleura,
      parenchyma: this.flags.parenchyma,
      cardio: this.flags.cardio,
      abnormal: this.flags.abnormal,
      annotator: this.annotator.trim(),
    };
  }
}

/** Collapse whitespace and truncate to `limit` characters with an ellipsis. */
export function makeSnippet(text: string, limit = 120): string {
  const collapsed = text.replace(/\s+/g, " ").trim();
  if (collapsed.length <= limit) {
    return collapsed;
  }
  return collapsed.slice(0, limit - 1).trimEnd() + "…";
}

export interface QueueRow {
  itemId: string;
  kind: ItemKind;
  snippet: string;
  createdAt: string;
}

/** Text a row's snippet is cut from, depending on what kind of item it is. */
export function itemDescription(item: ReviewItem): string {
  if (item.kind === "MatchConflict") {
    const candidates = item.payload.candidates ?? [];
    const first = candidates[0]?.description ?? "";
    return `${candidates.length} reports match: ${first}`;
  }
  return item.payload.description ?? "";
}

export function toQueueRows(items: ReviewItem[], limit = 120): QueueRow[] {
  return items.map((item) => ({
    itemId: item.item_id,
    kind: item.kind,
    snippet: makeSnippet(itemDescription(item), limit),
    createdAt: item.created_at,
  }));
}

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

/**
 * Escaped HTML for a description with every keyword occurrence wrapped in
 * <mark>. Matching is case-insensitive; at each position the longest
 * matching keyword wins.
 */
export function highlightEvidence(description: string, keywords: string[]): string {
  const needles = keywords
    .map((k) => k.toLowerCase())
    .filter((k) => k.length > 0);
  if (needles.length === 0) {
    return escapeHtml(description);
  }
  const lower = description.toLowerCase();
  let out = "";
  let pos = 0;
  while (pos < description.length) {
    let best = -1;
    let bestLen = 0;
    for (const needle of needles) {
      const at = lower.indexOf(needle, pos);
      if (at === -1) {
        continue;
      }
      if (best === -1 || at < best || (at === best && needle.length > bestLen)) {
        best = at;
        bestLen = needle.length;
      }
    }
    if (best === -1) {
      out += escapeHtml(description.slice(pos));
      break;
    }
    out += escapeHtml(description.slice(pos, best));
    out += "<mark>" + escapeHtml(description.slice(best, best + bestLen)) + "</mark>";
    pos = best + bestLen;
  }
  return out;
}
