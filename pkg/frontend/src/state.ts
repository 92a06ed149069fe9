import { ServiceClient } from "./api";
import type {
  AcquisitionMethod,
  RGB,
  RefineMode,
  SessionSummary,
} from "./types";
import { mergeQueue, type QueueEntry } from "./queue";
import {
  diffOverlay,
  segmentationOverlay,
  uncertaintyOverlay,
  type OverlayBuffer,
  type UncertaintyStyle,
} from "./overlay";

export type OverlayMode = "segmentation" | "uncertainty" | "diff";

export interface Marker {
  row: number;
  col: number;
  classId: number;
}

export interface ViewState {
  session: SessionSummary;
  activeClass: number;
  overlayMode: OverlayMode;
  uncertaintyStyle: UncertaintyStyle;
  overlayOpacity: number;
  strategy: AcquisitionMethod;
  selectedPatch: number | null;
  pendingClicks: Marker[]; // queued locally, not yet on the server
  submittedClicks: Marker[]; // mirrored server history, drives markers
  queue: QueueEntry[];
  classMap: number[][] | null;
  initialClassMap: number[][] | null; // session-start prediction, for diff mode
  palette: RGB[];
  uncertainty: number[][] | null;
  refineInFlight: boolean;
  hint: string | null;
}

type Listener = (state: ViewState) => void;

export interface Console {
  readonly state: ViewState;
  subscribe(listener: Listener): () => void;
  /** Fetch the initial prediction; call once after construction. */
  connect(): Promise<void>;
  setActiveClass(classId: number): void;
  setOverlayMode(mode: OverlayMode): Promise<void>;
  setUncertaintyStyle(style: UncertaintyStyle): void;
  setOpacity(opacity: number): void;
  clickAt(row: number, col: number): void;
  submit(): Promise<void>;
  refine(mode: RefineMode): Promise<void>;
  undoLast(): Promise<void>;
  setStrategy(strategy: AcquisitionMethod): Promise<void>;
  refreshQueue(): Promise<void>;
  selectPatch(index: number | null): void;
  /** The current overlay as an RGBA buffer, ready for the canvas. */
  overlay(): OverlayBuffer | null;
}

export function createConsole(client: ServiceClient, session: SessionSummary): Console {
  const state: ViewState = {
    session,
    activeClass: 0,
    overlayMode: "segmentation",
    uncertaintyStyle: "top_decile",
    overlayOpacity: 0.55,
    strategy: "entropy",
    selectedPatch: null,
    pendingClicks: [],
    submittedClicks: [],
    queue: [],
    classMap: null,
    initialClassMap: null,
    palette: [],
    uncertainty: null,
    refineInFlight: false,
    hint: null,
  };
  const listeners = new Set<Listener>();

  function emit() {
    for (const listener of listeners) listener(state);
  }

  function hint(message: string | null) {
    state.hint = message;
    emit();
  }

  /** Mutations are refused, with a hint, while a refine round trip runs. */
  function locked(): boolean {
    if (state.refineInFlight) {
      hint("refine in progress — controls disabled");
      return true;
    }
    return false;
  }

  async function fetchPrediction(): Promise<void> {
    const prediction = await client.getPrediction(session.session_id);
    state.classMap = prediction.class_map;
    state.palette = prediction.palette;
    if (state.initialClassMap === null) {
      state.initialClassMap = prediction.class_map;
    }
    emit();
  }

  async function fetchUncertainty(): Promise<void> {
    const payload = await client.getUncertainty(session.session_id, state.strategy);
    state.uncertainty = payload.scores;
    emit();
  }

  return {
    state,

    subscribe(listener: Listener) {
      listeners.add(listener);
      return () => listeners.delete(listener);
    },

    async connect() {
      await fetchPrediction();
    },

    setActiveClass(classId: number) {
      if (classId < 0 || classId >= session.class_count) {
        throw new Error(
          `class ${classId} outside 0..${session.class_count - 1}`);
      }
      state.activeClass = classId;
      emit();
    },

    async setOverlayMode(mode: OverlayMode) {
      state.overlayMode = mode;
      if (mode === "uncertainty" && state.uncertainty === null) {
        await fetchUncertainty();
      }
      emit();
    },

    setUncertaintyStyle(style: UncertaintyStyle) {
      state.uncertaintyStyle = style;
      emit();
    },

    setOpacity(opacity: number) {
      state.overlayOpacity = Math.min(1, Math.max(0, opacity));
      emit();
    },

    clickAt(row: number, col: number) {
      if (locked()) return;
      const [height, width] = session.shape;
      if (row < 0 || row >= height || col < 0 || col >= width) {
        hint(`click (${row}, ${col}) outside the ${height}x${width} image`);
        return;
      }
      state.pendingClicks.push({ row, col, classId: state.activeClass });
      hint(null);
    },

    async submit() {
      if (locked() || state.pendingClicks.length === 0) return;
      const batch = [...state.pendingClicks];
      const summary = await client.submitClicks(
        session.session_id,
        batch.map((m) => ({ row: m.row, col: m.col, class_id: m.classId })),
      );
      state.session = summary;
      state.submittedClicks.push(...batch);
      state.pendingClicks = []; // cleared only after the server accepted them
      emit();
    },

    async refine(mode: RefineMode) {
      if (locked()) return;
      state.refineInFlight = true;
      emit();
      try {
        state.session = await client.refine(session.session_id, mode);
        await fetchPrediction();
        if (state.uncertainty !== null) await fetchUncertainty();
        await this.refreshQueue();
      } finally {
        state.refineInFlight = false;
        emit();
      }
    },

    async undoLast() {
      if (locked()) return;
      const response = await client.undo(session.session_id);
      state.session = response;
      if (response.undone) {
        state.submittedClicks.pop();
        await fetchPrediction();
      }
      emit();
    },

    async setStrategy(strategy: AcquisitionMethod) {
      state.strategy = strategy;
      state.uncertainty = null; // stale for the new method
      await this.refreshQueue(); // pending clicks stay queued
    },

    async refreshQueue() {
      const payload = await client.getQueries(
        session.session_id, state.strategy);
      const clicks = [...state.submittedClicks, ...state.pendingClicks];
      state.queue = mergeQueue(payload.queries, state.queue, clicks);
      if (state.selectedPatch !== null && state.selectedPatch >= state.queue.length) {
        state.selectedPatch = null;
      }
      emit();
    },

    selectPatch(index: number | null) {
      if (index !== null && (index < 0 || index >= state.queue.length)) {
        throw new Error(`patch index ${index} outside the queue`);
      }
      state.selectedPatch = index;
      emit();
    },

    overlay(): OverlayBuffer | null {
      if (state.overlayMode === "segmentation") {
        if (!state.classMap) return null;
        return segmentationOverlay(state.classMap, state.palette, state.overlayOpacity);
      }
      if (state.overlayMode === "uncertainty") {
        if (!state.uncertainty) return null;
        return uncertaintyOverlay(
          state.uncertainty, state.uncertaintyStyle, state.overlayOpacity);
      }
      if (!state.classMap || !state.initialClassMap) return null;
      return diffOverlay(state.classMap, state.initialClassMap, state.overlayOpacity);
    },
  };
}
