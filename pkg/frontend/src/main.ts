/**
 * Explorer shell: DOM wiring only.
 *
 * All model math happens on the service; all display strings come from
 * the pure view-model modules (session, timeline, heatmap, format), so
 * everything on screen is traceable to a service response field.
 */
import { ApiClient, defaultBaseUrl } from './api';
import { fmtGoalBin, fmtMedications, fmtProbability } from './format';
import { cellHover, heatmapView, HeatmapView } from './heatmap';
import {
  appendWhatIf,
  clampGoal,
  comparisonRow,
  exportSession,
  freeRangePrompt,
  newSession,
  PresetName,
  presetPrompt,
  PromptSpec,
  SessionState,
} from './session';
import { timelineView } from './timeline';
import {
  PatientDetail,
  RecommendRequest,
  ServiceError,
} from './types';

let client = new ApiClient();
let session: SessionState = newSession();
let currentPatient: PatientDetail | null = null;
let currentPage = 0;

const $ = <T extends HTMLElement>(id: string): T =>
  document.getElementById(id) as T;

// --- service banner ---------------------------------------------------------

function showBanner(message: string | null): void {
  const banner = $('banner');
  banner.textContent = message ?? '';
  banner.classList.toggle('hidden', message === null);
}

async function checkHealth(): Promise<boolean> {
  try {
    const health = await client.health();
    showBanner(health.status === 'ok' ? null : 'Service degraded — no model loaded.');
    return health.status === 'ok';
  } catch {
    showBanner('Service unreachable. Check the URL and retry.');
    return false;
  }
}

// --- patient browser --------------------------------------------------------

async function loadPatients(page: number): Promise<void> {
  const data = await client.patients(page);
  currentPage = data.page;
  $('page-label').textContent =
    `page ${data.page + 1} / ${Math.max(1, Math.ceil(data.total / data.page_size))}` +
    ` — ${data.total} patients`;
  const list = $('patient-list');
  list.replaceChildren(
    ...data.patients.map((p) => {
      const li = document.createElement('li');
      li.textContent = `${p.id} (${p.n_admissions} admissions)`;
      li.classList.toggle('selected', p.id === session.selectedPatientId);
      li.onclick = () => void selectPatient(p.id);
      return li;
    }),
  );
}

async function selectPatient(id: string): Promise<void> {
  currentPatient = await client.patient(id);
  session = { ...newSession(), selectedPatientId: id };
  renderTimeline();
  renderHistory();
  $('attention-panel').classList.add('hidden');
  await loadPatients(currentPage);
}

function renderTimeline(): void {
  const host = $('timeline');
  if (!currentPatient) {
    host.replaceChildren();
    return;
  }
  const view = timelineView(currentPatient);
  const table = document.createElement('table');
  const header = table.insertRow();
  header.insertCell().textContent = 'lab';
  view.columns.forEach((c) => {
    header.insertCell().textContent = `adm ${c.admission}`;
  });
  view.labs.forEach((lab, row) => {
    const tr = table.insertRow();
    tr.insertCell().textContent = lab;
    view.columns.forEach((c) => {
      const cell = tr.insertCell();
      cell.textContent = c.cells[row].text;
      cell.classList.toggle('gap', c.cells[row].missing);
    });
  });
  for (const [label, value] of [
    ['medications', (c: (typeof view.columns)[0]) => c.medications],
    ['next A1c', (c: (typeof view.columns)[0]) => c.a1cNext],
  ] as const) {
    const tr = table.insertRow();
    tr.insertCell().textContent = label;
    view.columns.forEach((c) => {
      tr.insertCell().textContent = value(c);
    });
  }
  host.replaceChildren(table);
}

// --- goal prompt panel ------------------------------------------------------

function promptError(message: string | null): void {
  const el = $('prompt-error');
  el.textContent = message ?? '';
  el.classList.toggle('hidden', message === null);
  $('range-lo').classList.toggle('invalid', message !== null);
  $('range-hi').classList.toggle('invalid', message !== null);
}

async function firePrompt(spec: PromptSpec): Promise<void> {
  if (!session.selectedPatientId) {
    promptError('Select a patient first.');
    return;
  }
  const request: RecommendRequest = {
    patient_id: session.selectedPatientId,
    ...spec.goal,
    options: {
      top_n: session.preferences.topN,
      include_attention: session.preferences.showAttention,
    },
  };
  promptError(null);
  try {
    const response = await client.recommend(request);
    session = appendWhatIf(session, spec.label, request, response);
    renderHistory();
    renderRankedSets();
    renderAttention();
  } catch (err) {
    if (err instanceof DOMException && err.name === 'AbortError') return;
    if (err instanceof ServiceError && err.status < 500) {
      promptError(err.detail);
      return;
    }
    showBanner('Recommend request failed. Retry when the service is back.');
  }
}

function renderHistory(): void {
  const body = $('history-body') as HTMLTableSectionElement;
  body.replaceChildren(
    ...session.history.map((entry) => {
      const row = comparisonRow(entry);
      const tr = document.createElement('tr');
      for (const text of [
        row.label, row.medications, row.probability, row.goalBin,
        row.estimatedFactualA1c, row.estimatedRecommendedA1c, row.deltaA1c,
      ]) {
        const td = document.createElement('td');
        td.textContent = text;
        tr.appendChild(td);
      }
      return tr;
    }),
  );
}

function renderRankedSets(): void {
  const last = session.history[session.history.length - 1];
  const list = $('ranked-sets');
  if (!last) {
    list.replaceChildren();
    return;
  }
  list.replaceChildren(
    ...last.response.ranked_sets.map((entry) => {
      const li = document.createElement('li');
      li.textContent =
        `${fmtMedications(entry.medications)} — p=${fmtProbability(entry.probability)}` +
        ` (goal ${fmtGoalBin(entry.goal_bin)})`;
      return li;
    }),
  );
}

// --- attention heatmap ------------------------------------------------------

function renderAttention(): void {
  const panel = $('attention-panel');
  const last = session.history[session.history.length - 1];
  if (!last?.response.attention || !currentPatient) {
    panel.classList.add('hidden');
    return;
  }
  panel.classList.remove('hidden');
  const view = heatmapView(last.response.attention, currentPatient.admissions);
  const host = $('heatmaps');
  host.replaceChildren(...view.heads.map((head) => headTable(view, head)));
}

function headTable(view: HeatmapView, head: HeatmapView['heads'][0]): HTMLElement {
  const wrap = document.createElement('div');
  wrap.className = 'head';
  const title = document.createElement('h4');
  title.textContent = `layer ${head.layer}, head ${head.head}`;
  wrap.appendChild(title);
  const table = document.createElement('table');
  table.className = 'heatmap';
  head.cells.forEach((row) => {
    const tr = table.insertRow();
    row.forEach((cell) => {
      const td = tr.insertCell();
      td.style.background = `rgba(30, 90, 160, ${cell.intensity})`;
      td.classList.toggle('miss-token', view.missingTokens.has(cell.key));
      const hover = cellHover(view.tokenLabels, cell);
      td.title = `${hover.queryToken} ← ${hover.keyToken}: ${hover.weight}`;
    });
  });
  wrap.appendChild(table);
  return wrap;
}

// --- session export ---------------------------------------------------------

function downloadSession(): void {
  const payload = exportSession(session);
  const blob = new Blob([JSON.stringify(payload, null, 2)], {
    type: 'application/json',
  });
  const a = document.createElement('a');
  a.href = URL.createObjectURL(blob);
  a.download = `cdtlab-session-${session.selectedPatientId ?? 'none'}.json`;
  a.click();
  URL.revokeObjectURL(a.href);
}

// --- wiring -----------------------------------------------------------------

function wire(): void {
  $('service-url').setAttribute('value', defaultBaseUrl());
  $('service-url').oninput = (e) => {
    client = new ApiClient((e.target as HTMLInputElement).value);
  };
  $('retry').onclick = () => {
    void checkHealth().then((ok) => { if (ok) void loadPatients(currentPage); });
  };
  $('prev-page').onclick = () => void loadPatients(Math.max(0, currentPage - 1));
  $('next-page').onclick = () => void loadPatients(currentPage + 1);
  for (const name of ['Normal', 'Lower', 'Higher'] as PresetName[]) {
    $(`preset-${name.toLowerCase()}`).onclick = () =>
      void firePrompt(presetPrompt(name));
  }
  $('fire-range').onclick = () => {
    const lo = clampGoal(Number(($('range-lo') as HTMLInputElement).value));
    const hi = clampGoal(Number(($('range-hi') as HTMLInputElement).value));
    session = { ...session, currentRange: [lo, hi] };
    void firePrompt(freeRangePrompt(lo, hi));
  };
  $('show-attention').onchange = (e) => {
    session = {
      ...session,
      preferences: {
        ...session.preferences,
        showAttention: (e.target as HTMLInputElement).checked,
      },
    };
  };
  $('export-session').onclick = downloadSession;
  void checkHealth().then((ok) => { if (ok) void loadPatients(0); });
}

document.addEventListener('DOMContentLoaded', wire);
