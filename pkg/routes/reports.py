"""
Módulo de Reportes
Genera tablas Markdown/CSV/JSON a partir de SessionLog, celdas de techo y PlanLog,
con el denominador de cada speedup explícito en el encabezado de columna
"""

import json
import logging
from typing import Dict, List, Optional, Sequence, Tuple

import click
import pandas as pd
from flask import Blueprint

from routes.ceiling import ceiling_report, load_cells
from routes.drift import drift_report, join_session_logs
from routes.errors import CommandError, ReusoError, SchemaError
from routes.records import RunConfig, dumps, emit, read_jsonl, render_table, resolve_option, run_config
from routes.session import all_query_speedup, warm_speedup

reports_bp = Blueprint('reports', __name__, cli_group=None)

# Configurar logging
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

SESSION_COLUMNS = [
    'log', 'policy', 'sessions', 'queries', 'followup_median_s',
    'warm_speedup (cold follow-up median / session follow-up median)',
    'all_query_speedup (cold all-query median / session follow-up median)',
    'choice_drift', 'correctness_drift', 'pathological',
]
PLAN_COLUMNS = ['log', 'source_id', 'n_frames', 'mean_r_reuse', 'f_eff', 'raw_f_eff']


def _turns(records: Sequence[Dict], path: str) -> pd.DataFrame:
    rows = [r for r in records if r.get('record', 'turn') == 'turn']
    df = pd.DataFrame(rows)
    required = {'video_id', 'turn', 'latency_s', 'policy', 'pathological'}
    if not df.empty and not required.issubset(df.columns):
        raise SchemaError(f"{path}: faltan columnas {sorted(required - set(df.columns))}")
    return df


def session_table(logs: List[Tuple[str, List[Dict]]],
                  baseline: Optional[Tuple[str, List[Dict]]] = None) -> pd.DataFrame:
    """
    Una fila por log de sesiones; los speedups y la deriva se calculan contra la línea base fría
    """
    base_df = _turns(baseline[1], baseline[0]) if baseline else None
    rows = []
    for path, records in logs:
        df = _turns(records, path)
        if df.empty:
            continue
        follow = df[df['turn'] > 0]
        row = {
            'log': path,
            'policy': ','.join(sorted(df['policy'].unique())),
            'sessions': int(df['video_id'].nunique()),
            'queries': len(df),
            'followup_median_s': round(float(follow['latency_s'].median()), 6) if len(follow) else None,
            'pathological': int(df['pathological'].sum()),
        }
        if base_df is not None and len(follow) and not base_df.empty:
            session_median = float(follow['latency_s'].median())
            base_follow = base_df[base_df['turn'] > 0]
            row[SESSION_COLUMNS[5]] = round(
                warm_speedup(float(base_follow['latency_s'].median()), session_median), 4)
            row[SESSION_COLUMNS[6]] = round(
                all_query_speedup(float(base_df['latency_s'].median()), session_median), 4)
            report = drift_report(join_session_logs(baseline[1], records))
            row['choice_drift'] = f"{report.choice_diffs}/{report.n_rows}"
            row['correctness_drift'] = f"{report.correctness_diffs}/{report.n_rows}"
        rows.append(row)
    return pd.DataFrame(rows, columns=SESSION_COLUMNS)


def plan_table(logs: List[Tuple[str, List[Dict]]]) -> pd.DataFrame:
    rows = []
    for path, records in logs:
        for rec in records:
            if rec.get('record') != 'summary':
                continue
            try:
                rows.append({
                    'log': path,
                    'source_id': rec.get('source_id', ''),
                    'n_frames': rec['n_frames'],
                    'mean_r_reuse': rec['mean_r_reuse'],
                    'f_eff': rec['f_eff'],
                    'raw_f_eff': rec.get('raw_f_eff'),
                })
            except KeyError as e:
                raise SchemaError(f"{path}: resumen de plan sin {str(e)}")
    return pd.DataFrame(rows, columns=PLAN_COLUMNS)


def render_sections(sections: List[Tuple[str, pd.DataFrame]], fmt: str, config: RunConfig) -> str:
    """Concatena secciones con un único pie de procedencia"""
    if fmt == 'json':
        tables = {title: json.loads(df.to_json(orient='records')) for title, df in sections}
        return dumps({'config': config.header(), 'tables': tables}) + '\n'
    if fmt == 'md':
        body = '\n'.join(f"### {title}\n\n" + render_table(df, 'md') for title, df in sections)
        return body + '\n' + ''.join(f"_{line}_  \n" for line in config.footer_lines())
    body = ''.join(f"# tabla: {title}\n" + render_table(df, 'csv') for title, df in sections)
    return body + ''.join(f"# {line}\n" for line in config.footer_lines())


@reports_bp.cli.command('report')
@click.option('--sessions', 'session_paths', multiple=True, help='SessionLog JSONL (repetible)')
@click.option('--baseline', 'baseline_path', default=None, help='SessionLog JSONL de la línea base fría')
@click.option('--ceiling', 'ceiling_path', default=None, help='JSON de celdas de techo')
@click.option('--plans', 'plan_paths', multiple=True, help='PlanLog JSONL (repetible)')
@click.option('--tolerance-pp', type=float, default=None)
@click.option('--format', 'fmt', type=click.Choice(['md', 'csv', 'json']), default='md')
@click.option('--out', default=None)
def report_command(session_paths, baseline_path, ceiling_path, plan_paths, tolerance_pp, fmt, out):
    """Tablas a partir de logs de sesión, celdas de techo y planes."""
    try:
        if not (session_paths or ceiling_path or plan_paths):
            raise SchemaError("Se requiere al menos una entrada (--sessions, --ceiling o --plans)")
        sections = []
        if session_paths:
            baseline = (baseline_path, read_jsonl(baseline_path)) if baseline_path else None
            logs = [(p, read_jsonl(p)) for p in session_paths]
            sections.append(('sessions', session_table(logs, baseline)))
        if ceiling_path:
            tolerance = resolve_option(tolerance_pp, 'RESIDUAL_TOLERANCE_PP')
            sections.append(('ceiling', ceiling_report(load_cells(ceiling_path), tolerance).to_frame()))
        if plan_paths:
            sections.append(('plans', plan_table([(p, read_jsonl(p)) for p in plan_paths])))

        inputs = list(session_paths) + [p for p in (baseline_path, ceiling_path) if p] + list(plan_paths)
        run = run_config('report', inputs=inputs, outputs=[out])
        emit(render_sections(sections, fmt, run), out)
        logger.info(f"Reporte con {len(sections)} secciones")
    except ReusoError as e:
        logger.error(f"Error en comando report: {str(e)}")
        raise CommandError(str(e))
