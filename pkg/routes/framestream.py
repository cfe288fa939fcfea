"""
Módulo de Ingesta y Síntesis de Frames
Carga secuencias PPM desde manifiestos, aplica square-pad + resize y genera streams sintéticos
con mapas de cambio exactos para verificar cada decisión del planificador
"""

import json
import logging
import os
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import click
import numpy as np
from flask import Blueprint

from routes.errors import (
    CommandError,
    ConfigurationError,
    DimensionMismatchError,
    FrameFileMissingError,
    FrameStreamError,
    ManifestError,
    PPMHeaderError,
    ReusoError,
    SchemaError,
    SynthSpecError,
)
from routes.records import dumps, read_json, run_config, write_json

framestream_bp = Blueprint('framestream', __name__, cli_group=None)

# Configurar logging
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

MANIFEST_NAME = 'manifest.json'
TRUTH_NAME = 'truth.json'


@dataclass(frozen=True, eq=False)
class Frame:
    """Frame RGB decodificado: pixels en orden fila-mayor, forma (alto, ancho, 3), 8 bits"""
    width: int
    height: int
    pixels: np.ndarray

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise FrameStreamError(f"Dimensiones inválidas: {self.width}x{self.height}")
        pixels = np.asarray(self.pixels)
        if pixels.shape != (self.height, self.width, 3):
            raise FrameStreamError(
                f"Se esperaban {self.width * self.height * 3} valores, forma recibida {pixels.shape}"
            )
        if pixels.dtype != np.uint8:
            raise FrameStreamError(f"Los canales deben ser uint8, recibido {pixels.dtype}")
        pixels = pixels.copy()
        pixels.flags.writeable = False
        object.__setattr__(self, 'pixels', pixels)

    @classmethod
    def from_array(cls, pixels: np.ndarray) -> 'Frame':
        return cls(width=int(pixels.shape[1]), height=int(pixels.shape[0]), pixels=pixels)


@dataclass(frozen=True, eq=False)
class ActiveMask:
    """Un booleano por bloque del planificador; True = el bloque toca contenido original"""
    blocks: np.ndarray

    def __post_init__(self):
        blocks = np.asarray(self.blocks, dtype=bool).copy()
        if blocks.ndim != 2 or blocks.size == 0:
            raise FrameStreamError("La máscara activa debe ser una grilla 2D no vacía")
        if not blocks.any():
            raise FrameStreamError("La máscara activa no tiene ningún bloque activo")
        blocks.flags.writeable = False
        object.__setattr__(self, 'blocks', blocks)

    @property
    def n_active(self) -> int:
        return int(self.blocks.sum())

    @classmethod
    def full(cls, rows: int, cols: int) -> 'ActiveMask':
        return cls(np.ones((rows, cols), dtype=bool))


@dataclass(frozen=True, eq=False)
class FrameStream:
    """Secuencia ordenada de frames con dimensiones uniformes"""
    frames: Tuple[Frame, ...]
    source_id: str

    def __post_init__(self):
        frames = tuple(self.frames)
        if not frames:
            raise FrameStreamError(f"El stream {self.source_id} no tiene frames")
        first = frames[0]
        for i, frame in enumerate(frames[1:], start=1):
            if (frame.width, frame.height) != (first.width, first.height):
                raise DimensionMismatchError(
                    i, self.source_id, (first.width, first.height), (frame.width, frame.height)
                )
        object.__setattr__(self, 'frames', frames)

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def width(self) -> int:
        return self.frames[0].width

    @property
    def height(self) -> int:
        return self.frames[0].height


@dataclass(frozen=True)
class Rect:
    x: int
    y: int
    w: int
    h: int

    def shifted(self, dx: int, dy: int) -> 'Rect':
        return Rect(self.x + dx, self.y + dy, self.w, self.h)

    def inside(self, width: int, height: int) -> bool:
        return self.x >= 0 and self.y >= 0 and self.x + self.w <= width and self.y + self.h <= height


@dataclass(frozen=True)
class Mover:
    rect: Rect
    velocity: Tuple[int, int]  # px/frame (vx, vy)
    delta: int  # cambio de intensidad sumado a los tres canales

    def rect_at(self, t: int) -> Rect:
        return self.rect.shifted(self.velocity[0] * t, self.velocity[1] * t)


@dataclass(frozen=True)
class NovelEvent:
    frame: int  # el contenido aparece en este frame y persiste
    rect: Rect
    delta: int


@dataclass(frozen=True)
class Flicker:
    period: int
    amplitude: int

    def offset(self, t: int) -> int:
        return self.amplitude if (t // self.period) % 2 == 1 else 0


@dataclass(frozen=True)
class SynthSpec:
    """Especificación de un stream sintético con verdad de cambio conocida"""
    width: int
    height: int
    n_frames: int
    seed: int
    background: str = 'constant'  # 'constant' | 'textured'
    background_level: int = 64
    movers: Tuple[Mover, ...] = field(default_factory=tuple)
    novel_events: Tuple[NovelEvent, ...] = field(default_factory=tuple)
    flicker: Optional[Flicker] = None
    block_size: int = 28

    def validate(self) -> None:
        if self.n_frames < 2:
            raise SynthSpecError(f"n_frames debe ser >= 2, recibido {self.n_frames}")
        if self.block_size < 1:
            raise SynthSpecError(f"block_size inválido: {self.block_size}")
        if self.width < 1 or self.height < 1:
            raise SynthSpecError(f"Dimensiones inválidas: {self.width}x{self.height}")
        if self.width % self.block_size or self.height % self.block_size:
            raise SynthSpecError(
                f"{self.width}x{self.height} no es múltiplo del bloque {self.block_size}"
            )
        if self.background not in ('constant', 'textured'):
            raise SynthSpecError(f"Fondo desconocido: {self.background}")
        if not 0 <= self.background_level <= 255:
            raise SynthSpecError(f"background_level fuera de rango: {self.background_level}")
        if self.flicker is not None and self.flicker.period < 1:
            raise SynthSpecError(f"Periodo de flicker inválido: {self.flicker.period}")
        for i, mover in enumerate(self.movers):
            for t in range(self.n_frames):
                if not mover.rect_at(t).inside(self.width, self.height):
                    raise SynthSpecError(f"El mover {i} sale del cuadro en el frame {t}")
        for i, event in enumerate(self.novel_events):
            if not 0 <= event.frame < self.n_frames:
                raise SynthSpecError(f"Evento novel {i} fuera del stream: frame {event.frame}")
            if not event.rect.inside(self.width, self.height):
                raise SynthSpecError(f"Evento novel {i} fuera del cuadro")


@dataclass(frozen=True, eq=False)
class ChangeTruth:
    """Máximo |Δ| exacto por transición y por bloque, calculado por el generador"""
    block_size: int
    values: np.ndarray  # (n_frames - 1, filas, columnas)

    def to_dict(self) -> dict:
        return {'block_size': self.block_size, 'transitions': self.values.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> 'ChangeTruth':
        try:
            return cls(block_size=int(data['block_size']),
                       values=np.asarray(data['transitions'], dtype=np.int64))
        except (KeyError, TypeError, ValueError) as e:
            raise SchemaError(f"truth.json inválido: {str(e)}")


def _next_token(data: bytes, pos: int) -> Tuple[bytes, int]:
    """Devuelve el siguiente token de la cabecera PPM saltando espacios y comentarios"""
    n = len(data)
    while pos < n:
        if data[pos:pos + 1].isspace():
            pos += 1
        elif data[pos:pos + 1] == b'#':
            while pos < n and data[pos:pos + 1] not in (b'\n', b'\r'):
                pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b'#':
        pos += 1
    return data[start:pos], pos


def read_ppm(path: str, index: int = 0) -> Frame:
    """
    Lee un PPM binario (P6) de 8 bits
    """
    if not os.path.isfile(path):
        raise FrameFileMissingError(index, path)
    with open(path, 'rb') as fh:
        data = fh.read()

    magic, pos = _next_token(data, 0)
    if magic != b'P6':
        raise PPMHeaderError(index, path, f"número mágico {magic!r}, se esperaba b'P6'")
    fields = []
    for name in ('ancho', 'alto', 'maxval'):
        token, pos = _next_token(data, pos)
        if not token.isdigit():
            raise PPMHeaderError(index, path, f"{name} ausente o no numérico ({token!r})")
        fields.append(int(token))
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise PPMHeaderError(index, path, f"dimensiones {width}x{height}")
    if maxval != 255:
        raise PPMHeaderError(index, path, f"maxval {maxval}, solo se admite 255")
    # exactamente un byte de espacio separa la cabecera de los datos
    pos += 1
    expected = width * height * 3
    payload = data[pos:pos + expected]
    if len(payload) != expected:
        raise PPMHeaderError(index, path, f"datos incompletos: {len(payload)} de {expected} bytes")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
    return Frame(width=width, height=height, pixels=pixels)


def write_ppm(frame: Frame, path: str) -> None:
    with open(path, 'wb') as fh:
        fh.write(f"P6\n{frame.width} {frame.height}\n255\n".encode('ascii'))
        fh.write(frame.pixels.tobytes())


def resolve_manifest(path: str) -> str:
    """Acepta un manifiesto o un directorio generado por synth"""
    if os.path.isdir(path):
        return os.path.join(path, MANIFEST_NAME)
    return path


def load_stream(manifest_path: str) -> FrameStream:
    """
    Carga un FrameStream desde un manifiesto JSON con rutas relativas a PPMs
    """
    manifest_path = resolve_manifest(manifest_path)
    if not os.path.isfile(manifest_path):
        raise ManifestError(f"Manifiesto no encontrado: {manifest_path}")
    try:
        with open(manifest_path, 'r', encoding='utf-8') as fh:
            entries = json.load(fh)
    except json.JSONDecodeError as e:
        raise ManifestError(f"Manifiesto inválido {manifest_path}: {str(e)}")
    if not isinstance(entries, list) or not entries or not all(isinstance(e, str) for e in entries):
        raise ManifestError(f"El manifiesto {manifest_path} debe ser una lista no vacía de rutas")

    base_dir = os.path.dirname(os.path.abspath(manifest_path))
    frames = []
    expected = None
    for i, entry in enumerate(entries):
        path = os.path.join(base_dir, entry)
        frame = read_ppm(path, index=i)
        if expected is None:
            expected = (frame.width, frame.height)
        elif (frame.width, frame.height) != expected:
            raise DimensionMismatchError(i, entry, expected, (frame.width, frame.height))
        frames.append(frame)

    source_id = os.path.basename(os.path.dirname(os.path.abspath(manifest_path))) or 'stream'
    logger.info(f"Stream {source_id} cargado: {len(frames)} frames de {expected[0]}x{expected[1]}")
    return FrameStream(frames=tuple(frames), source_id=source_id)


def _sample_axis(target: int, side: int, pad: int, length: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Índice fuente por pixel de salida y si ese pixel cubre contenido original.
    El pixel i cubre [i*side/target, (i+1)*side/target) del cuadrado; el contenido ocupa
    [pad, pad+length). Un pixel que toca el contenido siempre toma la fila/columna más cercana.
    """
    i = np.arange(target)
    valid = (i * side < (pad + length) * target) & ((i + 1) * side > pad * target)
    src = np.clip(i * side // target - pad, 0, length - 1)
    return src, valid


def square_pad_resize(frame: Frame, target: int, block_size: int) -> Tuple[Frame, ActiveMask]:
    """
    Centra el frame en un cuadrado negro y lo redimensiona (vecino más cercano) a target x target
    """
    if block_size < 1 or target < 1 or target % block_size:
        raise ConfigurationError(f"target {target} no es divisible por el bloque {block_size}")

    side = max(frame.width, frame.height)
    pad_top = (side - frame.height) // 2
    pad_left = (side - frame.width) // 2

    rows_src, row_valid = _sample_axis(target, side, pad_top, frame.height)
    cols_src, col_valid = _sample_axis(target, side, pad_left, frame.width)

    out = np.zeros((target, target, 3), dtype=np.uint8)
    out[np.ix_(row_valid, col_valid)] = frame.pixels[np.ix_(rows_src[row_valid], cols_src[col_valid])]

    n_blocks = target // block_size
    block_rows = row_valid.reshape(n_blocks, block_size).any(axis=1)
    block_cols = col_valid.reshape(n_blocks, block_size).any(axis=1)
    mask = ActiveMask(np.outer(block_rows, block_cols))
    return Frame(width=target, height=target, pixels=out), mask


def _background(spec: SynthSpec) -> np.ndarray:
    shape = (spec.height, spec.width, 3)
    if spec.background == 'constant':
        return np.full(shape, spec.background_level, dtype=np.int16)
    rng = np.random.default_rng(spec.seed)
    noise = rng.integers(-32, 33, size=shape, dtype=np.int16)
    return np.clip(noise + spec.background_level, 0, 255).astype(np.int16)


def _render(spec: SynthSpec, base: np.ndarray, t: int) -> np.ndarray:
    img = base.copy()
    if spec.flicker is not None:
        img += spec.flicker.offset(t)
    for mover in spec.movers:
        r = mover.rect_at(t)
        img[r.y:r.y + r.h, r.x:r.x + r.w] += mover.delta
    for event in spec.novel_events:
        if t >= event.frame:
            r = event.rect
            img[r.y:r.y + r.h, r.x:r.x + r.w] += event.delta
    return np.clip(img, 0, 255).astype(np.uint8)


def _dirty_rects(spec: SynthSpec, t: int) -> Optional[List[Rect]]:
    """Regiones que pueden cambiar en la transición t-1 -> t; None = todo el cuadro"""
    if spec.flicker is not None and spec.flicker.offset(t) != spec.flicker.offset(t - 1):
        return None
    rects = []
    for mover in spec.movers:
        if mover.velocity != (0, 0) and mover.delta != 0:
            rects.append(mover.rect_at(t - 1))
            rects.append(mover.rect_at(t))
    for event in spec.novel_events:
        if event.frame == t and event.delta != 0:
            rects.append(event.rect)
    return rects


def synth_stream(spec: SynthSpec) -> Tuple[FrameStream, ChangeTruth]:
    """
    Genera un stream sintético determinista y su mapa de cambio por bloque
    """
    spec.validate()
    bs = spec.block_size
    rows, cols = spec.height // bs, spec.width // bs
    base = _background(spec)
    pixels = [_render(spec, base, t) for t in range(spec.n_frames)]

    truth = np.zeros((spec.n_frames - 1, rows, cols), dtype=np.int64)
    for t in range(1, spec.n_frames):
        dirty = _dirty_rects(spec, t)
        if dirty is None:
            blocks = {(r, c) for r in range(rows) for c in range(cols)}
        else:
            blocks = set()
            for rect in dirty:
                for r in range(rect.y // bs, (rect.y + rect.h - 1) // bs + 1):
                    for c in range(rect.x // bs, (rect.x + rect.w - 1) // bs + 1):
                        blocks.add((r, c))
        prev = pixels[t - 1].astype(np.int16)
        cur = pixels[t].astype(np.int16)
        for r, c in blocks:
            window = (slice(r * bs, (r + 1) * bs), slice(c * bs, (c + 1) * bs))
            truth[t - 1, r, c] = int(np.abs(cur[window] - prev[window]).max())

    frames = tuple(Frame.from_array(p) for p in pixels)
    stream = FrameStream(frames=frames, source_id=f"synth-{spec.seed}")
    logger.info(f"Stream sintético generado: {spec.n_frames} frames {spec.width}x{spec.height}")
    return stream, ChangeTruth(block_size=bs, values=truth)


def recompute_truth(stream: FrameStream, block_size: int) -> ChangeTruth:
    """Recalcula bloque a bloque el máximo |Δ| a partir de los pixels"""
    rows, cols = stream.height // block_size, stream.width // block_size
    values = np.zeros((len(stream) - 1, rows, cols), dtype=np.int64)
    for t in range(1, len(stream)):
        prev = stream.frames[t - 1].pixels
        cur = stream.frames[t].pixels
        for r in range(rows):
            for c in range(cols):
                ys = slice(r * block_size, (r + 1) * block_size)
                xs = slice(c * block_size, (c + 1) * block_size)
                diff = np.abs(cur[ys, xs].astype(np.int16) - prev[ys, xs].astype(np.int16))
                values[t - 1, r, c] = int(diff.max())
    return ChangeTruth(block_size=block_size, values=values)


def _rect(data) -> Rect:
    x, y, w, h = (int(v) for v in data)
    return Rect(x, y, w, h)


def synth_spec_from_dict(data: dict) -> SynthSpec:
    """Convierte el documento JSON en SynthSpec"""
    try:
        movers = tuple(
            Mover(rect=_rect(m['rect']), velocity=(int(m['velocity'][0]), int(m['velocity'][1])),
                  delta=int(m['delta']))
            for m in data.get('movers', [])
        )
        events = tuple(
            NovelEvent(frame=int(e['frame']), rect=_rect(e['rect']), delta=int(e['delta']))
            for e in data.get('novel_events', [])
        )
        flicker = data.get('flicker')
        return SynthSpec(
            width=int(data['width']),
            height=int(data['height']),
            n_frames=int(data['n_frames']),
            seed=int(data.get('seed', 0)),
            background=data.get('background', 'constant'),
            background_level=int(data.get('background_level', 64)),
            movers=movers,
            novel_events=events,
            flicker=Flicker(int(flicker['period']), int(flicker['amplitude'])) if flicker else None,
            block_size=int(data.get('block_size', 28)),
        )
    except (KeyError, TypeError, ValueError, IndexError) as e:
        raise SchemaError(f"Especificación sintética inválida: {str(e)}")


def load_synth_spec(path: str) -> SynthSpec:
    data = read_json(path)
    if not isinstance(data, dict):
        raise SchemaError(f"{path} debe contener un objeto JSON")
    return synth_spec_from_dict(data)


def write_stream(stream: FrameStream, truth: Optional[ChangeTruth], out_dir: str, header: dict) -> List[str]:
    """Escribe frames PPM, manifest.json y truth.json en out_dir"""
    os.makedirs(out_dir, exist_ok=True)
    names = []
    for i, frame in enumerate(stream.frames):
        name = f"frame_{i:04d}.ppm"
        write_ppm(frame, os.path.join(out_dir, name))
        names.append(name)
    with open(os.path.join(out_dir, MANIFEST_NAME), 'w', encoding='utf-8') as fh:
        fh.write(dumps(names) + '\n')
    if truth is not None:
        payload = truth.to_dict()
        payload['config'] = header
        write_json(os.path.join(out_dir, TRUTH_NAME), payload)
    return names


@framestream_bp.cli.command('synth')
@click.option('--spec', 'spec_path', required=True, help='Especificación sintética (JSON)')
@click.option('--out', 'out_dir', required=True, help='Directorio de salida')
def synth_command(spec_path, out_dir):
    """Genera un stream sintético con frames PPM y truth.json."""
    try:
        spec = load_synth_spec(spec_path)
        stream, truth = synth_stream(spec)
        config = run_config('synth', inputs=[spec_path], outputs=[out_dir], seed=spec.seed,
                            block_size=spec.block_size)
        names = write_stream(stream, truth, out_dir, config.header())
        click.echo(f"frames={len(names)} bloques={truth.values.shape[1]}x{truth.values.shape[2]} "
                   f"cambios={int((truth.values > 0).sum())}")
    except ReusoError as e:
        logger.error(f"Error en comando synth: {str(e)}")
        raise CommandError(str(e))
