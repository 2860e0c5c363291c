/**
 * Annotation session state. Every operation returns a new session object;
 * nothing is mutated in place, so history entries can be handed straight to
 * renderers without defensive copies and a failed request provably leaves
 * the document untouched.
 */

import type { EraseRequestBody, EraseResponseBody } from "./api";
import type { Point } from "./transform";

export type ViewMode = "input" | "erased" | "stroke_overlay" | "side_by_side";
export type MaskSource = "stroke_mask" | "stroke_mask2";

export interface SourceImage {
  /** Base64 PNG, exactly the bytes sent to the service. */
  data: string;
  width: number;
  height: number;
  name: string;
}

export interface HistoryEntry {
  readonly request: EraseRequestBody;
  readonly response: EraseResponseBody;
}

export interface Session {
  readonly image: SourceImage | null;
  readonly polygons: ReadonlyArray<ReadonlyArray<Point>>;
  readonly draft: ReadonlyArray<Point>;
  readonly history: ReadonlyArray<HistoryEntry>;
  /** Index into history of the entry being viewed, or -1 for none. */
  readonly viewed: number;
  readonly view: ViewMode;
  readonly maskSource: MaskSource;
  readonly overlayOpacity: number;
  readonly inFlight: boolean;
  readonly banner: string | null;
}

export function newSession(): Session {
  return {
    image: null,
    polygons: [],
    draft: [],
    history: [],
    viewed: -1,
    view: "input",
    maskSource: "stroke_mask2",
    overlayOpacity: 0.6,
    inFlight: false,
    banner: null,
  };
}

/** Start over on a new image; view state survives, annotations do not. */
export function loadImage(s: Session, image: SourceImage): Session {
  return {
    ...newSession(),
    view: s.view,
    maskSource: s.maskSource,
    overlayOpacity: s.overlayOpacity,
    image,
  };
}

function insideImage(s: Session, x: number, y: number): boolean {
  return (
    s.image !== null && x >= 0 && y >= 0 && x <= s.image.width && y <= s.image.height
  );
}

/**
 * Append a vertex to the draft polygon. Clicks outside the image bounds are
 * ignored; the returned session carries a banner so the UI can show why.
 */
export function addVertex(s: Session, x: number, y: number): Session {
  if (!insideImage(s, x, y)) {
    return { ...s, banner: "click inside the image to add a vertex" };
  }
  return { ...s, draft: [...s.draft, { x, y }], banner: null };
}

export function undoVertex(s: Session): Session {
  if (s.draft.length === 0) return s;
  return { ...s, draft: s.draft.slice(0, -1) };
}

/**
 * Close the draft into a polygon. A ring needs at least three vertices;
 * shorter drafts are kept open so the user can continue.
 */
export function closeDraft(s: Session): Session {
  if (s.draft.length < 3) {
    return { ...s, banner: "a polygon needs at least 3 vertices" };
  }
  return { ...s, polygons: [...s.polygons, s.draft], draft: [], banner: null };
}

export function removePolygon(s: Session, index: number): Session {
  if (index < 0 || index >= s.polygons.length) return s;
  return { ...s, polygons: s.polygons.filter((_, i) => i !== index) };
}

export function clearAnnotations(s: Session): Session {
  return { ...s, polygons: [], draft: [] };
}

/** The request body a submit would send right now. */
export function buildRequest(s: Session): EraseRequestBody {
  if (s.image === null) throw new Error("no image loaded");
  if (s.polygons.length === 0) throw new Error("draw at least one polygon");
  return {
    image: s.image.data,
    polygons: s.polygons.map((poly) => poly.map((p) => [p.x, p.y])),
    composite: true,
    return_strokes: true,
  };
}

export function canSubmit(s: Session): boolean {
  return s.image !== null && s.polygons.length > 0 && !s.inFlight;
}

/** Mark the single allowed in-flight request. */
export function beginSubmit(s: Session): Session {
  if (!canSubmit(s)) throw new Error("submit is not available");
  return { ...s, inFlight: true, banner: null };
}

/** Record a finished round trip; polygons stay for refinement. */
export function completeSubmit(
  s: Session,
  request: EraseRequestBody,
  response: EraseResponseBody,
): Session {
  const history = [...s.history, { request, response }];
  return {
    ...s,
    history,
    viewed: history.length - 1,
    inFlight: false,
    banner: null,
    view: s.view === "input" ? "erased" : s.view,
  };
}

/** A failed submit only clears the in-flight flag and raises a banner. */
export function failSubmit(s: Session, message: string): Session {
  return { ...s, inFlight: false, banner: message };
}

export function setView(s: Session, view: ViewMode): Session {
  return { ...s, view };
}

export function setMaskSource(s: Session, maskSource: MaskSource): Session {
  return { ...s, maskSource };
}

export function setOverlayOpacity(s: Session, overlayOpacity: number): Session {
  return { ...s, overlayOpacity: Math.min(1, Math.max(0, overlayOpacity)) };
}

export function viewHistory(s: Session, index: number): Session {
  if (index < -1 || index >= s.history.length) return s;
  return { ...s, viewed: index };
}

export function viewedEntry(s: Session): HistoryEntry | null {
  return s.viewed >= 0 ? s.history[s.viewed] : null;
}

/**
 * The durable annotation document: image, polygons, and the full request /
 * response history. Transient view state (banners, opacity, in-flight flag)
 * is deliberately excluded, so two serializations differ only when the
 * document itself changed.
 */
export function serializeSession(s: Session): string {
  return JSON.stringify({
    image: s.image,
    polygons: s.polygons,
    draft: s.draft,
    history: s.history,
  });
}
