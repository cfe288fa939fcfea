"""
Módulo de Auditoría de Deriva Pareada
Compara respuestas de un brazo de reuso contra su línea base fría: deriva de elección y de
corrección, fallas de parseo, salidas patológicas, gates, cota rule-of-three y solapamiento Jaccard
"""

import logging
import re
from dataclasses import asdict, dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import click
import pandas as pd
from flask import Blueprint

from routes.errors import CommandError, ConfigurationError, DriftError, ReusoError, SchemaError
from routes.records import dumps, emit, read_json, read_jsonl, render_table, resolve_option, run_config

drift_bp = Blueprint('drift', __name__, cli_group=None)

# Configurar logging
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

PARSE_FAIL = 'ParseFail'
OPEN_ENDED = 'OpenEnded'

DEFAULT_ATTRACTORS = ('addCriterion', '自动生成')

_CHOICE_PATTERN = re.compile(r'(?<![A-Za-z0-9])\(?([A-Fa-f])[).]?(?![A-Za-z0-9])')


def parse_choice(raw: str, n_options: int = 4) -> str:
    """
    Letra aislada A..(n_options) como X, (X), X. o X), sin distinguir mayúsculas.
    Ninguna coincidencia o letras en conflicto -> ParseFail.
    """
    if not 2 <= n_options <= 6:
        raise ConfigurationError(f"n_options debe estar en 2..6, recibido {n_options}")
    allowed = 'ABCDEF'[:n_options]
    found = {m.group(1).upper() for m in _CHOICE_PATTERN.finditer(raw)}
    found &= set(allowed)
    if len(found) != 1:
        return PARSE_FAIL
    return found.pop()


@dataclass(frozen=True)
class AttractorSet:
    strings: Tuple[str, ...] = DEFAULT_ATTRACTORS
    mode: str = 'prefix'  # prefix | exact

    def __post_init__(self):
        if self.mode not in ('prefix', 'exact'):
            raise ConfigurationError(f"Modo de atractor desconocido: {self.mode}")
        if any(not s for s in self.strings):
            raise ConfigurationError("Los atractores no pueden ser cadenas vacías")

    @classmethod
    def from_dict(cls, data) -> 'AttractorSet':
        if isinstance(data, list):
            return cls(strings=tuple(str(s) for s in data))
        if not isinstance(data, dict) or 'strings' not in data:
            raise SchemaError("Atractores: se esperaba una lista o {strings, mode}")
        return cls(strings=tuple(str(s) for s in data['strings']), mode=data.get('mode', 'prefix'))


def is_pathological(raw: str, attractors: AttractorSet) -> bool:
    text = raw.strip()
    if attractors.mode == 'exact':
        return text in attractors.strings
    return any(text.startswith(s) for s in attractors.strings)


@dataclass(frozen=True)
class Answer:
    raw_text: str
    choice: str
    correct: bool


@dataclass(frozen=True)
class PairedRow:
    item_id: str
    turn: int
    baseline: Answer
    candidate: Answer
    session_id: str = ''

    def swapped(self) -> 'PairedRow':
        return PairedRow(self.item_id, self.turn, self.candidate, self.baseline, self.session_id)


def answer_for(raw_text: str, answer_key: str, n_options: int = 4) -> Answer:
    """Parsea y califica una respuesta; n_options = 0 es pregunta abierta"""
    if n_options == 0:
        return Answer(raw_text, OPEN_ENDED, raw_text == answer_key)
    choice = parse_choice(raw_text, n_options)
    return Answer(raw_text, choice, choice == answer_key)


@dataclass(frozen=True)
class DriftReport:
    n_rows: int
    choice_diffs: int
    correctness_diffs: int
    text_diffs: int
    baseline_parse_failures: int
    candidate_parse_failures: int
    matched_parse_failures: int
    pathological: int
    baseline_pathological: int
    baseline_correct: int
    candidate_correct: int
    split_turn: int
    early_rows: int
    early_choice_diffs: int
    late_rows: int
    late_choice_diffs: int
    drift_rate: float
    gate: float
    gate_pass: bool
    rule_of_three: float
    sessions: int
    sessions_with_drift: int
    agreement: Optional[float]
    agreement_gate: float
    agreement_pass: Optional[bool]

    @property
    def text_identical(self) -> int:
        return self.n_rows - self.text_diffs

    @property
    def accuracy_delta(self) -> float:
        """Exactitud del candidato menos la de la línea base"""
        return (self.candidate_correct - self.baseline_correct) / self.n_rows

    def to_dict(self) -> Dict:
        data = asdict(self)
        data['drift_rate'] = round(self.drift_rate, 6)
        data['rule_of_three'] = round(self.rule_of_three, 6)
        if self.agreement is not None:
            data['agreement'] = round(self.agreement, 6)
        data['text_identical'] = self.text_identical
        data['accuracy_delta'] = round(self.accuracy_delta, 6)
        return data

    def to_frame(self) -> pd.DataFrame:
        rows = [
            ('paired rows', str(self.n_rows)),
            ('choice drift', f"{self.choice_diffs}/{self.n_rows} ({self.drift_rate:.2%})"),
            ('correctness drift', f"{self.correctness_diffs}/{self.n_rows}"),
            ('text diffs', f"{self.text_diffs}/{self.n_rows}"),
            ('matched parse failures', str(self.matched_parse_failures)),
            ('parse failures (baseline/candidate)',
             f"{self.baseline_parse_failures}/{self.candidate_parse_failures}"),
            ('pathological', str(self.pathological)),
            ('correct (baseline/candidate)', f"{self.baseline_correct}/{self.candidate_correct}"),
            ('accuracy delta', f"{self.accuracy_delta:+.4f}"),
            (f'early (turn < {self.split_turn})', f"{self.early_choice_diffs}/{self.early_rows}"),
            (f'late (turn >= {self.split_turn})', f"{self.late_choice_diffs}/{self.late_rows}"),
            (f'gate {self.gate:.0%}', 'pass' if self.gate_pass else 'fail'),
            ('rule-of-three bound', f"{self.rule_of_three:.4f}"),
            ('sessions with drift', f"{self.sessions_with_drift}/{self.sessions}"),
        ]
        if self.agreement is not None:
            verdict = 'pass' if self.agreement_pass else 'fail'
            rows.append(('choice agreement', f"{self.agreement:.4f} ({verdict})"))
        return pd.DataFrame(rows, columns=['metric', 'value'])


def rule_of_three(n: int) -> float:
    """Cota superior ~95% (3/n) para una tasa con cero eventos en n ensayos; nunca supera 1"""
    if n < 1:
        raise DriftError(f"n debe ser >= 1, recibido {n}")
    return min(1.0, 3.0 / n)


def jaccard(set_a: Iterable[str], set_b: Iterable[str]) -> float:
    a, b = set(set_a), set(set_b)
    union = a | b
    if not union:
        return 1.0
    return len(a & b) / len(union)


def rows_frame(rows: Sequence[PairedRow]) -> pd.DataFrame:
    return pd.DataFrame({
        'item_id': [r.item_id for r in rows],
        'session_id': [r.session_id or r.item_id for r in rows],
        'turn': [r.turn for r in rows],
        'b_text': [r.baseline.raw_text for r in rows],
        'c_text': [r.candidate.raw_text for r in rows],
        'b_choice': [r.baseline.choice for r in rows],
        'c_choice': [r.candidate.choice for r in rows],
        'b_correct': [bool(r.baseline.correct) for r in rows],
        'c_correct': [bool(r.candidate.correct) for r in rows],
    })


def drift_report(rows: Sequence[PairedRow], gate: float = 0.03,
                 attractors: Optional[AttractorSet] = None, split_turn: Optional[int] = None,
                 agreement_gate: float = 0.85) -> DriftReport:
    """
    Conteos pareados. Dos ParseFail en una fila son una falla emparejada y no cuentan como
    deriva de elección.
    """
    if not rows:
        raise DriftError("No hay filas pareadas para auditar")
    if not 0.0 < gate <= 1.0 or not 0.0 <= agreement_gate <= 1.0:
        raise ConfigurationError(f"Gates inválidos: gate={gate}, agreement_gate={agreement_gate}")
    attractors = attractors or AttractorSet()

    df = rows_frame(rows)
    b_fail = df['b_choice'] == PARSE_FAIL
    c_fail = df['c_choice'] == PARSE_FAIL
    matched = b_fail & c_fail
    choice_diff = (df['b_choice'] != df['c_choice']) & ~matched
    correct_diff = df['b_correct'] != df['c_correct']
    any_diff = choice_diff | correct_diff

    if split_turn is None:
        split_turn = (int(df['turn'].max()) + 1) // 2
    early = df['turn'] < split_turn

    multiple_choice = (df['b_choice'] != OPEN_ENDED) & (df['c_choice'] != OPEN_ENDED)
    n_mc = int(multiple_choice.sum())
    agreement = None
    if n_mc:
        agree = (df['b_choice'] == df['c_choice']) & ~b_fail & multiple_choice
        agreement = int(agree.sum()) / n_mc

    n = len(df)
    choice_diffs = int(choice_diff.sum())
    drift_rate = choice_diffs / n
    return DriftReport(
        n_rows=n,
        choice_diffs=choice_diffs,
        correctness_diffs=int(correct_diff.sum()),
        text_diffs=int((df['b_text'] != df['c_text']).sum()),
        baseline_parse_failures=int(b_fail.sum()),
        candidate_parse_failures=int(c_fail.sum()),
        matched_parse_failures=int(matched.sum()),
        pathological=int(df['c_text'].map(lambda t: is_pathological(t, attractors)).sum()),
        baseline_pathological=int(df['b_text'].map(lambda t: is_pathological(t, attractors)).sum()),
        baseline_correct=int(df['b_correct'].sum()),
        candidate_correct=int(df['c_correct'].sum()),
        split_turn=split_turn,
        early_rows=int(early.sum()),
        early_choice_diffs=int((choice_diff & early).sum()),
        late_rows=int((~early).sum()),
        late_choice_diffs=int((choice_diff & ~early).sum()),
        drift_rate=drift_rate,
        gate=gate,
        gate_pass=drift_rate <= gate,
        rule_of_three=rule_of_three(n),
        sessions=int(df['session_id'].nunique()),
        sessions_with_drift=int(df.loc[any_diff, 'session_id'].nunique()),
        agreement=agreement,
        agreement_gate=agreement_gate,
        agreement_pass=None if agreement is None else agreement >= agreement_gate,
    )


def cache_correctness_diff(rows: Sequence[PairedRow]) -> Tuple[int, int, int, int]:
    """(filas con texto idéntico, diffs de elección, diffs de corrección, fallas de parseo emparejadas)"""
    if not rows:
        return 0, 0, 0, 0
    report = drift_report(rows)
    return (report.text_identical, report.choice_diffs, report.correctness_diffs,
            report.matched_parse_failures)


def drift_items(rows: Sequence[PairedRow]) -> Set[str]:
    """Items con al menos una deriva de elección o de corrección"""
    drifted = set()
    for row in rows:
        matched = row.baseline.choice == PARSE_FAIL and row.candidate.choice == PARSE_FAIL
        if (row.baseline.choice != row.candidate.choice and not matched) or \
                row.baseline.correct != row.candidate.correct:
            drifted.add(row.item_id)
    return drifted


def load_paired_fixture(path: str) -> List[PairedRow]:
    """
    Expande un fixture compacto: una grilla sesiones x turnos con valores por defecto y
    overrides por celda.
    """
    data = read_json(path)
    return paired_rows_from_dict(data)


def paired_rows_from_dict(data: Dict) -> List[PairedRow]:
    try:
        grid = data['grid']
        default = data['default']
        prefix = grid.get('prefix', 's')
        lo, hi = grid['turns']
        n_sessions = int(grid['sessions'])
    except (KeyError, TypeError, ValueError) as e:
        raise SchemaError(f"Fixture pareado inválido: {str(e)}")

    # "session"/"turn" fijan una celda; "sessions"/"turns" [lo, hi] cubren un rango inclusivo
    overrides = {}
    for item in data.get('overrides', []):
        try:
            s_lo, s_hi = item['sessions'] if 'sessions' in item else (item['session'], item['session'])
            t_lo, t_hi = item['turns'] if 'turns' in item else (item['turn'], item['turn'])
            cells = [(s, t) for s in range(int(s_lo), int(s_hi) + 1)
                     for t in range(int(t_lo), int(t_hi) + 1)]
        except KeyError as e:
            raise SchemaError(f"Override sin el campo {str(e)}")
        except (TypeError, ValueError) as e:
            raise SchemaError(f"Override inválido: {str(e)}")
        for cell in cells:
            if cell in overrides:
                raise SchemaError(f"Override repetido para la celda {cell}")
            overrides[cell] = {k: v for k, v in item.items()
                               if k not in ('session', 'sessions', 'turn', 'turns')}

    rows = []
    for s in range(n_sessions):
        session_id = f"{prefix}{s:02d}"
        for turn in range(lo, hi + 1):
            cell = dict(default, **overrides.get((s, turn), {}))
            n_options = int(cell.get('n_options', 4))
            key = str(cell['answer_key'])
            rows.append(PairedRow(
                item_id=session_id,
                turn=turn,
                baseline=answer_for(cell['baseline'], key, n_options),
                candidate=answer_for(cell['candidate'], key, n_options),
                session_id=session_id,
            ))
    return rows


def join_session_logs(baseline: Sequence[Dict], candidate: Sequence[Dict]) -> List[PairedRow]:
    """
    Une dos SessionLog JSONL por (video_id, turn); filas sin pareja son un error de esquema.
    Registros que no son de turno (cabecera, resumen) se ignoran.
    """
    def index(records: Sequence[Dict], side: str) -> Dict[Tuple[str, int], Dict]:
        table = {}
        for rec in records:
            if rec.get('record', 'turn') != 'turn':
                continue
            try:
                key = (str(rec['video_id']), int(rec['turn']))
                missing = [f for f in ('raw_text', 'choice', 'correct') if f not in rec]
            except (KeyError, TypeError, ValueError) as e:
                raise SchemaError(f"Registro {side} inválido: falta {str(e)}")
            if missing:
                raise SchemaError(f"Registro {side} {key} sin los campos {missing}")
            if key in table:
                raise SchemaError(f"Registro {side} duplicado para {key}")
            table[key] = rec
        return table

    base = index(baseline, 'baseline')
    cand = index(candidate, 'candidate')
    if set(base) != set(cand):
        missing = sorted(set(base) ^ set(cand))[:3]
        raise SchemaError(f"Filas sin pareja entre baseline y candidate: {missing}")

    rows = []
    for key in sorted(base):
        b, c = base[key], cand[key]
        rows.append(PairedRow(
            item_id=key[0],
            turn=key[1],
            baseline=Answer(b['raw_text'], b['choice'], bool(b['correct'])),
            candidate=Answer(c['raw_text'], c['choice'], bool(c['correct'])),
            session_id=key[0],
        ))
    return rows


@drift_bp.cli.command('audit')
@click.option('--baseline', 'baseline_path', required=True, help='SessionLog JSONL de la línea base')
@click.option('--candidate', 'candidate_path', required=True, help='SessionLog JSONL del brazo de reuso')
@click.option('--gate', type=float, default=None)
@click.option('--agreement-gate', type=float, default=None)
@click.option('--split-turn', type=int, default=None)
@click.option('--attractors', 'attractors_path', default=None, help='JSON con cadenas atractoras')
@click.option('--format', 'fmt', type=click.Choice(['json', 'md']), default='json')
@click.option('--out', default=None)
def audit_command(baseline_path, candidate_path, gate, agreement_gate, split_turn, attractors_path,
                  fmt, out):
    """Audita la deriva pareada entre dos SessionLog."""
    try:
        gate = resolve_option(gate, 'DRIFT_GATE')
        agreement_gate = resolve_option(agreement_gate, 'AGREEMENT_GATE')
        attractors = AttractorSet.from_dict(read_json(attractors_path)) if attractors_path \
            else AttractorSet()
        rows = join_session_logs(read_jsonl(baseline_path), read_jsonl(candidate_path))
        report = drift_report(rows, gate, attractors, split_turn, agreement_gate)

        inputs = [p for p in (baseline_path, candidate_path, attractors_path) if p]
        run = run_config('audit', inputs=inputs, outputs=[out], gate=gate,
                         agreement_gate=agreement_gate, split_turn=report.split_turn)
        if fmt == 'json':
            emit(dumps({'config': run.header(), 'report': report.to_dict()}) + '\n', out)
        else:
            emit(render_table(report.to_frame(), 'md', run), out)
        logger.info(f"Auditoría: {report.choice_diffs}/{report.n_rows} derivas de elección")
    except ReusoError as e:
        logger.error(f"Error en comando audit: {str(e)}")
        raise CommandError(str(e))
