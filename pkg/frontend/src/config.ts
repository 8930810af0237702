// The one deployment knob: where the review service lives. Empty string
// means same-origin, which is what you get when the service hosts this
// bundle itself (review-serve --ui-dir). To point a dev copy at another
// host, set window.API_BASE before app.js loads.

declare global {
  interface Window {
    API_BASE?: string;
  }
}

export const API_BASE: string =
  typeof window !== "undefined" && window.API_BASE ? window.API_BASE : "";
