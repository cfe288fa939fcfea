"""
Módulo del Planificador Temporal
Clasifica el cambio por bloque (static/shifted/novel), aplica staleness acotada y convierte
el reuso por bloque en presupuesto efectivo de frames frescos
"""

import logging
import os
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Dict, List, Optional, Tuple

import click
import numpy as np
from flask import Blueprint
from joblib import Parallel, delayed

from routes.errors import CommandError, ConfigurationError, PlannerError, ReusoError
from routes.framestream import (
    TRUTH_NAME,
    ActiveMask,
    ChangeTruth,
    Frame,
    FrameStream,
    load_stream,
    square_pad_resize,
)
from routes.records import emit, jsonl_text, read_json, resolve_option, run_config

planner_bp = Blueprint('planner', __name__, cli_group=None)

# Configurar logging
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)


class BlockClass(IntEnum):
    STATIC = 0
    SHIFTED = 1
    NOVEL = 2


class Decision(IntEnum):
    REUSE = 0
    FRESH = 1


@dataclass(frozen=True)
class BlockGrid:
    """Geometría de bloques alineada con la grilla de tokens del modelo"""
    block_size: int
    cols: int
    rows: int

    def __post_init__(self):
        if self.block_size < 1 or self.cols < 1 or self.rows < 1:
            raise ConfigurationError(
                f"Grilla inválida: bloque {self.block_size}, {self.cols}x{self.rows}"
            )

    @classmethod
    def for_frame(cls, frame: Frame, block_size: int) -> 'BlockGrid':
        if block_size < 1 or frame.width % block_size or frame.height % block_size:
            raise ConfigurationError(
                f"El bloque {block_size} no divide {frame.width}x{frame.height}"
            )
        return cls(block_size=block_size, cols=frame.width // block_size,
                   rows=frame.height // block_size)

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.rows, self.cols)


@dataclass(frozen=True)
class Thresholds:
    """Umbrales en unidades de canal de 8 bits"""
    tau_static: int = 8
    tau_novel: int = 48

    def __post_init__(self):
        if not 0 <= self.tau_static < self.tau_novel <= 255:
            raise ConfigurationError(
                f"Se requiere 0 <= tau_static < tau_novel <= 255, "
                f"recibido ({self.tau_static}, {self.tau_novel})"
            )


@dataclass(frozen=True, eq=False)
class PlannerState:
    """Edad por bloque (pasos desde el último refresco) y límite de staleness"""
    ages: np.ndarray
    max_age: int = 4

    def __post_init__(self):
        if self.max_age < 0:
            raise ConfigurationError(f"max_age debe ser >= 0, recibido {self.max_age}")

    @classmethod
    def initial(cls, grid: BlockGrid, max_age: int) -> 'PlannerState':
        # el primer frame de cualquier stream es completamente fresco
        return cls(ages=np.zeros(grid.shape, dtype=np.int64), max_age=max_age)


@dataclass(frozen=True)
class PlannerConfig:
    block_size: int = 28
    thresholds: Thresholds = field(default_factory=Thresholds)
    max_age: int = 4
    target: Optional[int] = None  # square-pad + resize opcional

    def to_dict(self) -> Dict:
        return {
            'block_size': self.block_size,
            'tau_static': self.thresholds.tau_static,
            'tau_novel': self.thresholds.tau_novel,
            'max_age': self.max_age,
            'target': self.target,
        }


@dataclass(frozen=True, eq=False)
class TransitionRecord:
    t: int  # índice 1-based del frame de destino
    scores: np.ndarray
    classes: np.ndarray
    decisions: np.ndarray
    ages: np.ndarray
    r_reuse: float
    raw_r_reuse: float

    def to_dict(self, include_scores: bool = True) -> Dict:
        record = {
            'record': 'transition',
            't': self.t,
            'classes': [[BlockClass(int(c)).name.lower() for c in row] for row in self.classes],
            'decisions': [[Decision(int(d)).name.lower() for d in row] for row in self.decisions],
            'ages': self.ages.tolist(),
            'r_reuse': round(self.r_reuse, 6),
            'raw_r_reuse': round(self.raw_r_reuse, 6),
        }
        if include_scores:
            record['scores'] = self.scores.tolist()
        return record


@dataclass(frozen=True)
class PlanSummary:
    n_frames: int
    mean_r_reuse: float
    f_eff: float
    mean_raw_r_reuse: float
    raw_f_eff: float
    n_active_blocks: int

    def to_dict(self) -> Dict:
        return {
            'record': 'summary',
            'n_frames': self.n_frames,
            'mean_r_reuse': round(self.mean_r_reuse, 6),
            'f_eff': round(self.f_eff, 6),
            'mean_raw_r_reuse': round(self.mean_raw_r_reuse, 6),
            'raw_f_eff': round(self.raw_f_eff, 6),
            'n_active_blocks': self.n_active_blocks,
        }


@dataclass(frozen=True)
class PlanLog:
    source_id: str
    config: PlannerConfig
    transitions: Tuple[TransitionRecord, ...]
    summary: PlanSummary

    def records(self, include_scores: bool = True) -> List[Dict]:
        return [t.to_dict(include_scores) for t in self.transitions] + [self.summary.to_dict()]


def block_scores(prev: Frame, cur: Frame, grid: BlockGrid) -> np.ndarray:
    """
    Máximo |cur - prev| sobre los pixels y los tres canales de cada bloque
    """
    expected = (grid.rows * grid.block_size, grid.cols * grid.block_size)
    for frame in (prev, cur):
        if (frame.height, frame.width) != expected:
            raise PlannerError(
                f"Frame {frame.width}x{frame.height} no coincide con la grilla "
                f"{expected[1]}x{expected[0]}"
            )
    diff = np.abs(cur.pixels.astype(np.int16) - prev.pixels.astype(np.int16))
    bs = grid.block_size
    return diff.reshape(grid.rows, bs, grid.cols, bs, 3).max(axis=(1, 3, 4)).astype(np.int64)


def classify(scores: np.ndarray, thresholds: Thresholds) -> np.ndarray:
    """Un empate con un umbral cae en la clase inferior"""
    scores = np.asarray(scores)
    classes = np.full(scores.shape, BlockClass.SHIFTED, dtype=np.int64)
    classes[scores <= thresholds.tau_static] = BlockClass.STATIC
    classes[scores > thresholds.tau_novel] = BlockClass.NOVEL
    return classes


def step(state: PlannerState, classes: np.ndarray) -> Tuple[PlannerState, np.ndarray]:
    """
    Avanza el contador de edad: novel o edad vencida -> Fresh (edad 0), el resto -> Reuse (edad+1)
    """
    classes = np.asarray(classes)
    if classes.shape != state.ages.shape:
        raise PlannerError(f"Clases {classes.shape} no coinciden con el estado {state.ages.shape}")
    next_age = state.ages + 1
    fresh = (classes == BlockClass.NOVEL) | (next_age > state.max_age)
    ages = np.where(fresh, 0, next_age)
    decisions = np.where(fresh, Decision.FRESH, Decision.REUSE).astype(np.int64)
    return PlannerState(ages=ages, max_age=state.max_age), decisions


def reuse_ratio(decisions: np.ndarray, mask: ActiveMask) -> float:
    """Fracción de bloques activos reusados; el padding queda fuera"""
    decisions = np.asarray(decisions)
    if decisions.shape != mask.blocks.shape:
        raise PlannerError(f"Decisiones {decisions.shape} y máscara {mask.blocks.shape} no alinean")
    n_active = mask.n_active
    if n_active == 0:
        raise PlannerError("No hay bloques activos")
    reused = int(((decisions == Decision.REUSE) & mask.blocks).sum())
    return reused / n_active


def effective_fresh(n_frames: int, r_mean: float) -> float:
    """f_eff = 1 + (N - 1)(1 - r_reuse)"""
    if n_frames < 1:
        raise PlannerError(f"N debe ser >= 1, recibido {n_frames}")
    if not 0.0 <= r_mean <= 1.0:
        raise PlannerError(f"r_reuse fuera de [0, 1]: {r_mean}")
    return 1.0 + (n_frames - 1) * (1.0 - r_mean)


def backsolve_reuse(n_frames: int, f_eff: float) -> float:
    """Inverso de effective_fresh: r_reuse medio que produce f_eff con N frames"""
    if n_frames < 2:
        raise PlannerError("Se necesitan al menos 2 frames para despejar r_reuse")
    if not 1.0 <= f_eff <= n_frames:
        raise PlannerError(f"f_eff fuera de [1, {n_frames}]: {f_eff}")
    return 1.0 - (f_eff - 1.0) / (n_frames - 1)


def frontier_relation(policy_acc: float, policy_fresh: float,
                      comparator_acc: float, comparator_fresh: float, eps: float = 1e-9) -> str:
    """
    Relación calidad-presupuesto frente a un comparador denso-N
    """
    same_acc = abs(policy_acc - comparator_acc) <= eps
    if policy_fresh <= comparator_fresh + eps:
        if same_acc:
            return 'tie'
        return 'frontier' if policy_acc > comparator_acc else 'tradeoff'
    if policy_acc > comparator_acc and not same_acc:
        return 'tradeoff'
    return 'dominated'


def _prepare(stream: FrameStream, config: PlannerConfig) -> Tuple[List[Frame], ActiveMask]:
    if config.target is None:
        grid = BlockGrid.for_frame(stream.frames[0], config.block_size)
        return list(stream.frames), ActiveMask.full(grid.rows, grid.cols)
    frames = []
    mask = None
    for frame in stream.frames:
        padded, mask = square_pad_resize(frame, config.target, config.block_size)
        frames.append(padded)
    return frames, mask


def plan_stream(stream: FrameStream, config: PlannerConfig) -> PlanLog:
    """
    Planifica un stream completo y resume r_reuse medio y f_eff con N = largo del stream
    """
    if len(stream) < 2:
        raise PlannerError(f"El stream {stream.source_id} necesita al menos 2 frames")

    frames, mask = _prepare(stream, config)
    grid = BlockGrid.for_frame(frames[0], config.block_size)
    full = ActiveMask.full(grid.rows, grid.cols)
    state = PlannerState.initial(grid, config.max_age)

    transitions = []
    for t in range(1, len(frames)):
        scores = block_scores(frames[t - 1], frames[t], grid)
        classes = classify(scores, config.thresholds)
        state, decisions = step(state, classes)
        transitions.append(TransitionRecord(
            t=t,
            scores=scores,
            classes=classes,
            decisions=decisions,
            ages=state.ages,
            r_reuse=reuse_ratio(decisions, mask),
            raw_r_reuse=reuse_ratio(decisions, full),
        ))

    n = len(frames)
    mean_r = float(np.mean([tr.r_reuse for tr in transitions]))
    mean_raw = float(np.mean([tr.raw_r_reuse for tr in transitions]))
    summary = PlanSummary(
        n_frames=n,
        mean_r_reuse=mean_r,
        f_eff=effective_fresh(n, mean_r),
        mean_raw_r_reuse=mean_raw,
        raw_f_eff=effective_fresh(n, mean_raw),
        n_active_blocks=mask.n_active,
    )
    logger.info(f"Plan generado para {stream.source_id}: r_reuse={mean_r:.4f}, f_eff={summary.f_eff:.4f}")
    return PlanLog(source_id=stream.source_id, config=config,
                   transitions=tuple(transitions), summary=summary)


def plan_streams(streams: List[FrameStream], config: PlannerConfig, workers: int = 1) -> List[PlanLog]:
    """Planifica streams independientes en paralelo; el orden de salida es el de entrada"""
    return Parallel(n_jobs=workers, prefer='threads')(
        delayed(plan_stream)(stream, config) for stream in streams
    )


def truth_mismatches(log: PlanLog, truth: ChangeTruth) -> int:
    """Cantidad de bloques cuyo score difiere del mapa de cambio del generador"""
    if truth.values.shape[0] != len(log.transitions):
        raise PlannerError(
            f"truth tiene {truth.values.shape[0]} transiciones, el plan {len(log.transitions)}"
        )
    scores = np.stack([tr.scores for tr in log.transitions])
    if scores.shape != truth.values.shape:
        raise PlannerError(f"Grillas distintas: plan {scores.shape}, truth {truth.values.shape}")
    return int((scores != truth.values).sum())


@planner_bp.cli.command('plan')
@click.option('--stream', 'stream_paths', required=True, multiple=True,
              help='Manifiesto JSON o directorio generado por synth (repetible)')
@click.option('--tau-static', type=int, default=None)
@click.option('--tau-novel', type=int, default=None)
@click.option('--max-age', type=int, default=None)
@click.option('--block-size', type=int, default=None)
@click.option('--target', type=int, default=None, help='Tamaño square-pad (p. ej. 560)')
@click.option('--scores/--no-scores', default=True, help='Incluir scores por bloque en el JSONL')
@click.option('--check-truth', is_flag=True, help='Comparar scores con truth.json del directorio')
@click.option('--workers', type=int, default=None)
@click.option('--out', default=None, help='Archivo JSONL de salida')
def plan_command(stream_paths, tau_static, tau_novel, max_age, block_size, target, scores,
                 check_truth, workers, out):
    """Planifica uno o más streams y escribe el PlanLog en JSONL."""
    try:
        config = PlannerConfig(
            block_size=resolve_option(block_size, 'BLOCK_SIZE'),
            thresholds=Thresholds(resolve_option(tau_static, 'TAU_STATIC'),
                                  resolve_option(tau_novel, 'TAU_NOVEL')),
            max_age=resolve_option(max_age, 'MAX_AGE'),
            target=resolve_option(target, 'TARGET_SIZE'),
        )
        streams = [load_stream(p) for p in stream_paths]
        logs = plan_streams(streams, config, resolve_option(workers, 'WORKERS'))

        run = run_config('plan', inputs=stream_paths, outputs=[out], **config.to_dict())
        records = [run.header()]
        for path, log in zip(stream_paths, logs):
            records.extend(dict(r, source_id=log.source_id) for r in log.records(scores))
        emit(jsonl_text(records), out)

        mismatches = 0
        for path, log in zip(stream_paths, logs):
            click.echo(f"{log.source_id}: n_frames={log.summary.n_frames} "
                       f"mean_r_reuse={log.summary.mean_r_reuse:.4f} f_eff={log.summary.f_eff:.4f}",
                       err=out is None)
            if check_truth:
                truth = ChangeTruth.from_dict(read_json(_truth_path(path)))
                found = truth_mismatches(log, truth)
                mismatches += found
                click.echo(f"{log.source_id}: bloques distintos de truth={found}", err=out is None)
    except ReusoError as e:
        logger.error(f"Error en comando plan: {str(e)}")
        raise CommandError(str(e))
    if mismatches:
        raise click.exceptions.Exit(1)


def _truth_path(stream_path: str) -> str:
    base = stream_path if os.path.isdir(stream_path) else os.path.dirname(stream_path)
    return os.path.join(base, TRUTH_NAME)
