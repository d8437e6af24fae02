/**
 * Attention heatmap view model.
 *
 * Pure functions from the service's attention payload to renderable
 * cells: per-head matrices with a row-normalized color scale, weights
 * carried through unchanged for hover display, zero (disallowed) cells
 * kept as hard zeros, and [MISS] tokens flagged so unmeasured labs stand
 * out in the axis labels.
 */
import { Admission, AttentionPayload } from './types';

/** Label format for clinical state tokens: "adm{t}:{column}". */
const STATE_LABEL = /^adm(\d+):(.+)$/;

/**
 * Token indices whose state token is the [MISS] vector: lab columns that
 * were not measured at that admission.  Goal, medication, and baseline
 * tokens are never missing.
 */
export function missingTokenIndices(
  labels: string[],
  admissions: Admission[],
): Set<number> {
  const missing = new Set<number>();
  labels.forEach((label, i) => {
    const m = STATE_LABEL.exec(label);
    if (!m || m[2] === 'meds') return;
    const adm = admissions[Number(m[1]) - 1];
    if (adm && m[2] in adm.labs && adm.labs[m[2]] === null) {
      missing.add(i);
    }
  });
  return missing;
}

export interface HeatmapCell {
  query: number;
  key: number;
  /** Raw attention weight, exactly as served. */
  weight: number;
  /** Row-normalized color intensity in [0, 1]; hard 0 for weight 0. */
  intensity: number;
}

/** One head's cells with each row scaled by its own maximum weight. */
export function headCells(matrix: number[][]): HeatmapCell[][] {
  return matrix.map((row, q) => {
    const max = Math.max(...row);
    return row.map((weight, k) => ({
      query: q,
      key: k,
      weight,
      intensity: weight === 0 ? 0 : max > 0 ? weight / max : 0,
    }));
  });
}

export interface HeadView {
  layer: number;
  head: number;
  cells: HeatmapCell[][];
}

export interface HeatmapView {
  tokenLabels: string[];
  missingTokens: Set<number>;
  heads: HeadView[];
}

/**
 * Full view for one attention payload.  The service sends the last layer
 * by default; `layerOffset` restores absolute layer numbers for display
 * when only a suffix of layers is present.
 */
export function heatmapView(
  payload: AttentionPayload,
  admissions: Admission[],
  layerOffset = 0,
): HeatmapView {
  const heads: HeadView[] = [];
  payload.layers.forEach((layer, l) => {
    layer.forEach((matrix, h) => {
      heads.push({ layer: layerOffset + l, head: h, cells: headCells(matrix) });
    });
  });
  return {
    tokenLabels: payload.token_labels,
    missingTokens: missingTokenIndices(payload.token_labels, admissions),
    heads,
  };
}

export interface CellHover {
  queryToken: string;
  keyToken: string;
  weight: number;
}

/** Hover contract: (query token, key token, weight) for one cell. */
export function cellHover(
  labels: string[],
  cell: HeatmapCell,
): CellHover {
  return {
    queryToken: labels[cell.query],
    keyToken: labels[cell.key],
    weight: cell.weight,
  };
}
