/**
 * Patient timeline view model.
 *
 * One column per admission; labs that were not measured become explicit
 * gap markers ("—"), never zeros and never interpolated values.
 */
import { fmtA1c, fmtMedications } from './format';
import { PatientDetail } from './types';

export const GAP_MARKER = '—';

export interface TimelineCell {
  lab: string;
  /** Rendered value, or the gap marker when the lab was not measured. */
  text: string;
  missing: boolean;
}

export interface TimelineColumn {
  admission: number; // 1-based
  cells: TimelineCell[];
  medications: string;
  a1cNext: string; // gap marker when the follow-up A1c is missing
}

export interface TimelineView {
  patientId: string;
  labs: string[];
  columns: TimelineColumn[];
}

/** Stable lab row order: union of lab names across admissions, sorted. */
export function labRows(patient: PatientDetail): string[] {
  const names = new Set<string>();
  for (const adm of patient.admissions) {
    for (const lab of Object.keys(adm.labs)) names.add(lab);
  }
  return [...names].sort();
}

export function timelineView(patient: PatientDetail): TimelineView {
  const labs = labRows(patient);
  return {
    patientId: patient.id,
    labs,
    columns: patient.admissions.map((adm, t) => ({
      admission: t + 1,
      cells: labs.map((lab) => {
        const value = adm.labs[lab];
        const missing = value === null || value === undefined;
        return {
          lab,
          text: missing ? GAP_MARKER : fmtA1c(value as number),
          missing,
        };
      }),
      medications: fmtMedications(adm.meds),
      a1cNext: adm.a1c_next === null ? GAP_MARKER : fmtA1c(adm.a1c_next),
    })),
  };
}
