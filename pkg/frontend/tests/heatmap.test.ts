import { describe, expect, it } from 'vitest';

import {
  cellHover,
  headCells,
  heatmapView,
  missingTokenIndices,
} from '../src/heatmap';
import { AttentionPayload } from '../src/types';
import { patientDetail } from './fixtures';

const LABELS = [
  'goal',
  'adm1:sex',
  'adm1:hemoglobin_a1c',
  'adm1:glucose_serum',
  'adm1:meds',
  'adm2:hemoglobin_a1c',
  'adm2:glucose_serum',
];

function payload(nHeads: number): AttentionPayload {
  const n = LABELS.length;
  const matrix = () =>
    Array.from({ length: n }, (_, q) =>
      Array.from({ length: n }, (_, k) =>
        k <= q ? 1 / (q + 1) : 0));
  return {
    token_labels: LABELS,
    layers: [Array.from({ length: nHeads }, matrix)],
  };
}

describe('missing token detection', () => {
  it('flags lab tokens whose value is null at that admission', () => {
    const missing = missingTokenIndices(LABELS, patientDetail().admissions);
    // adm2 hemoglobin_a1c is null in the fixture; adm1 labs are measured
    expect(missing).toEqual(new Set([5]));
  });

  it('never flags goal, baseline, or medication tokens', () => {
    const missing = missingTokenIndices(LABELS, patientDetail().admissions);
    expect(missing.has(0)).toBe(false); // goal
    expect(missing.has(1)).toBe(false); // baseline
    expect(missing.has(4)).toBe(false); // meds
  });
});

describe('head cells', () => {
  it('normalizes each row by its own maximum', () => {
    const cells = headCells([
      [0.5, 0.5, 0],
      [0.2, 0.1, 0.7],
    ]);
    expect(cells[0].map((c) => c.intensity)).toEqual([1, 1, 0]);
    expect(cells[1][2].intensity).toBe(1);
    expect(cells[1][0].intensity).toBeCloseTo(0.2 / 0.7, 12);
  });

  it('keeps disallowed (zero-weight) cells as hard zeros', () => {
    const cells = headCells([[1, 0, 0]]);
    expect(cells[0][1].weight).toBe(0);
    expect(cells[0][1].intensity).toBe(0);
    expect(cells[0][2].intensity).toBe(0);
  });

  it('carries raw weights through unchanged for hover display', () => {
    const cells = headCells([[0.123456, 0.876544]]);
    expect(cells[0][0].weight).toBe(0.123456);
    const hover = cellHover(['a', 'b'], cells[0][1]);
    expect(hover).toEqual({ queryToken: 'a', keyToken: 'b', weight: 0.876544 });
  });
});

describe('heatmap view', () => {
  it('renders exactly the payload head count', () => {
    const view = heatmapView(payload(4), patientDetail().admissions);
    expect(view.heads).toHaveLength(4);
    expect(view.heads.map((h) => h.head)).toEqual([0, 1, 2, 3]);
  });

  it('keeps token labels verbatim from the payload', () => {
    const view = heatmapView(payload(1), patientDetail().admissions);
    expect(view.tokenLabels).toEqual(LABELS);
  });

  it('applies the layer offset for single-layer payloads', () => {
    const view = heatmapView(payload(2), patientDetail().admissions, 3);
    expect(view.heads.map((h) => h.layer)).toEqual([3, 3]);
  });
});
