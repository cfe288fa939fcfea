"""
Módulo de Techos de Aceleración
Predice la aceleración end-to-end a partir de las fracciones de cada etapa y calcula residuales
contra las aceleraciones observadas
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import click
import pandas as pd
from flask import Blueprint

from routes.errors import CeilingError, CommandError, ReusoError, SchemaError
from routes.records import emit, read_json, render_table, resolve_option, run_config

ceiling_bp = Blueprint('ceiling', __name__, cli_group=None)

# Configurar logging
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class StageShareCell:
    """Celda de etapa genérica: fracción intacta y factor de aceleración de la componente"""
    name: str
    f_fixed: float  # fracción del tiempo denso que no se acelera
    s: float  # factor de aceleración de la componente
    observed: Optional[float] = None
    verdict: str = ''

    def __post_init__(self):
        if not 0.0 <= self.f_fixed <= 1.0:
            raise CeilingError(f"{self.name}: f_fixed fuera de [0, 1]: {self.f_fixed}")
        if self.s <= 0:
            raise CeilingError(f"{self.name}: s debe ser > 0, recibido {self.s}")

    def predict(self) -> float:
        return ideal_e2e(self.f_fixed, self.s)


@dataclass(frozen=True)
class VisionCell:
    """Celda de visión: fracción densa del encoder y reducción observada de su tiempo"""
    name: str
    v_share: float
    v_red: float
    observed: Optional[float] = None
    verdict: str = ''

    def __post_init__(self):
        for label, value in (('v_share', self.v_share), ('v_red', self.v_red)):
            if not 0.0 <= value <= 1.0:
                raise CeilingError(f"{self.name}: {label} fuera de [0, 1]: {value}")
        if self.v_share * self.v_red >= 1.0:
            raise CeilingError(f"{self.name}: v_share * v_red debe ser < 1")

    def predict(self) -> float:
        return scatterback_pred(self.v_share, self.v_red)


Cell = Union[StageShareCell, VisionCell]


@dataclass(frozen=True)
class CeilingRow:
    name: str
    predicted: float
    observed: Optional[float]
    residual_pp: Optional[float]
    passed: Optional[bool]
    verdict: str


@dataclass(frozen=True)
class CeilingReport:
    rows: Tuple[CeilingRow, ...]
    tolerance_pp: float

    def to_frame(self) -> pd.DataFrame:
        columns = ['cell', 'predicted', 'observed', 'residual_pp', 'status', 'verdict']
        data = []
        for row in self.rows:
            if row.passed is None:
                status = '-'
            else:
                status = 'pass' if row.passed else 'miss'
            data.append({
                'cell': row.name,
                'predicted': round(row.predicted, 3),
                'observed': row.observed,
                'residual_pp': None if row.residual_pp is None else round(row.residual_pp, 1),
                'status': status,
                'verdict': row.verdict,
            })
        return pd.DataFrame(data, columns=columns)


def ideal_e2e(f_fixed: float, s: float) -> float:
    """1 / (f_fixed + (1 - f_fixed) / s)"""
    if s <= 0:
        raise CeilingError(f"s debe ser > 0, recibido {s}")
    if not 0.0 <= f_fixed <= 1.0:
        raise CeilingError(f"f_fixed fuera de [0, 1]: {f_fixed}")
    return 1.0 / (f_fixed + (1.0 - f_fixed) / s)


def multi_stage_e2e(f_fixed: float, stages: Sequence[Tuple[float, float]]) -> float:
    """
    Varias etapas aceleradas (f_i, s_i) sobre una fracción intacta f_fixed.
    Las fracciones deben sumar 1.
    """
    total = f_fixed + sum(f for f, _ in stages)
    if abs(total - 1.0) > 1e-9:
        raise CeilingError(f"Las fracciones suman {total:.6f}, se esperaba 1")
    denominator = f_fixed
    for share, factor in stages:
        if share < 0:
            raise CeilingError(f"Fracción negativa: {share}")
        if factor <= 0:
            raise CeilingError(f"Factor de etapa debe ser > 0, recibido {factor}")
        denominator += share / factor
    return 1.0 / denominator


def scatterback_pred(v_share: float, v_red: float) -> float:
    """1 / (1 - v_share * v_red)"""
    product = v_share * v_red
    if product >= 1.0:
        raise CeilingError(f"v_share * v_red = {product} debe ser < 1")
    if v_share < 0 or v_red < 0:
        raise CeilingError("v_share y v_red deben ser >= 0")
    return 1.0 / (1.0 - product)


def backsolve_v_share(predicted: float, v_red: float) -> float:
    """Fracción de visión que hace scatterback_pred(v_share, v_red) == predicted"""
    if predicted < 1.0:
        raise CeilingError(f"La predicción debe ser >= 1, recibido {predicted}")
    if v_red <= 0:
        raise CeilingError(f"v_red debe ser > 0, recibido {v_red}")
    v_share = (1.0 - 1.0 / predicted) / v_red
    if v_share > 1.0:
        raise CeilingError(f"v_share despejado {v_share:.4f} > 1 con v_red={v_red}")
    return v_share


def residual(observed: float, predicted: float) -> float:
    """Observado menos predicho, en puntos porcentuales"""
    return (observed - predicted) * 100.0


def ceiling_report(cells: Sequence[Cell], tolerance_pp: float) -> CeilingReport:
    if tolerance_pp < 0:
        raise CeilingError(f"La tolerancia debe ser >= 0, recibido {tolerance_pp}")
    rows = []
    for cell in cells:
        predicted = cell.predict()
        res = None if cell.observed is None else residual(cell.observed, predicted)
        rows.append(CeilingRow(
            name=cell.name,
            predicted=predicted,
            observed=cell.observed,
            residual_pp=res,
            passed=None if res is None else abs(res) <= tolerance_pp,
            verdict=cell.verdict,
        ))
    return CeilingReport(rows=tuple(rows), tolerance_pp=tolerance_pp)


def cell_from_dict(data: Dict) -> Cell:
    """
    Construye una celda desde JSON. Tipos soportados:
    - vision: v_share, v_red
    - stage: f_fixed, s
    - sparse: v_red, observed, residual_x (v_share se despeja de observed - residual_x)
    """
    kind = data.get('kind', 'vision')
    try:
        name = str(data['name'])
        observed = data.get('observed')
        verdict = data.get('verdict', '')
        if kind == 'vision':
            return VisionCell(name, float(data['v_share']), float(data['v_red']), observed, verdict)
        if kind == 'stage':
            return StageShareCell(name, float(data['f_fixed']), float(data['s']), observed, verdict)
        if kind == 'sparse':
            predicted = float(data['observed']) - float(data['residual_x'])
            v_red = float(data['v_red'])
            return VisionCell(name, backsolve_v_share(predicted, v_red), v_red, observed, verdict)
    except KeyError as e:
        raise SchemaError(f"Celda {data.get('name', '?')}: falta el campo {str(e)}")
    except (TypeError, ValueError) as e:
        raise SchemaError(f"Celda {data.get('name', '?')}: valor inválido ({str(e)})")
    raise SchemaError(f"Tipo de celda desconocido: {kind}")


def load_cells(path: str) -> List[Cell]:
    """Lee un arreglo JSON de celdas o un objeto {provenance, cells}"""
    data = read_json(path)
    if isinstance(data, dict):
        data = data.get('cells')
    if not isinstance(data, list):
        raise SchemaError(f"{path}: se esperaba una lista de celdas")
    return [cell_from_dict(item) for item in data]


@ceiling_bp.cli.command('ceiling')
@click.option('--cells', 'cells_path', required=True, help='JSON con celdas de techo')
@click.option('--tolerance-pp', type=float, default=None)
@click.option('--format', 'fmt', type=click.Choice(['md', 'csv', 'json']), default=None,
              help='Formato de tabla (por defecto se deduce de --out, si no md)')
@click.option('--out', default=None)
def ceiling_command(cells_path, tolerance_pp, fmt, out):
    """Predicciones, residuales y pass/miss por celda."""
    try:
        tolerance = resolve_option(tolerance_pp, 'RESIDUAL_TOLERANCE_PP')
        report = ceiling_report(load_cells(cells_path), tolerance)
        fmt = fmt or table_format(out)
        run = run_config('ceiling', inputs=[cells_path], outputs=[out], tolerance_pp=tolerance)
        emit(render_table(report.to_frame(), fmt, run), out)
        logger.info(f"Reporte de techo con {len(report.rows)} celdas")
    except ReusoError as e:
        logger.error(f"Error en comando ceiling: {str(e)}")
        raise CommandError(str(e))


def table_format(out: Optional[str]) -> str:
    if out and out.endswith('.csv'):
        return 'csv'
    if out and out.endswith('.json'):
        return 'json'
    return 'md'
