"""
Módulo de Registros y Salidas
Serialización JSON/JSONL determinista, configuración resuelta de cada corrida y tablas CSV/Markdown
"""

import json
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional

import click
import pandas as pd
from flask import current_app

from routes.errors import SchemaError

# Configurar logging
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

TABLE_FORMATS = ('md', 'csv', 'json')


@dataclass
class RunConfig:
    """Configuración resuelta de una corrida; se copia en la cabecera de cada salida"""
    subcommand: str
    tool: str
    version: str
    seed: Optional[int] = None
    inputs: List[str] = field(default_factory=list)
    outputs: List[str] = field(default_factory=list)
    options: Dict[str, Any] = field(default_factory=dict)

    def header(self) -> Dict:
        return {
            'record': 'header',
            'tool': self.tool,
            'version': self.version,
            'subcommand': self.subcommand,
            'seed': self.seed,
            'inputs': list(self.inputs),
            'outputs': list(self.outputs),
            'options': dict(self.options),
        }

    def footer_lines(self) -> List[str]:
        inputs = ', '.join(self.inputs) if self.inputs else '-'
        return [
            f"fuente: {self.tool} {self.version} ({self.subcommand})",
            f"entradas: {inputs}",
            f"seed: {self.seed if self.seed is not None else '-'}",
        ]


def run_config(subcommand: str, inputs: Iterable[str] = (), outputs: Iterable[str] = (),
               seed: Optional[int] = None, **options) -> RunConfig:
    """Construye el RunConfig leyendo nombre y versión de la configuración de la app"""
    return RunConfig(
        subcommand=subcommand,
        tool=current_app.config['TOOL_NAME'],
        version=current_app.config['VERSION'],
        seed=seed,
        inputs=[str(p) for p in inputs],
        outputs=[str(p) for p in outputs if p],
        options=options,
    )


def resolve_option(value, config_key: str):
    """Devuelve el valor explícito o, si es None, el de app.config"""
    return current_app.config[config_key] if value is None else value


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False)


def read_json(path: str):
    try:
        with open(path, 'r', encoding='utf-8') as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise SchemaError(f"Archivo no encontrado: {path}")
    except json.JSONDecodeError as e:
        raise SchemaError(f"JSON inválido en {path}: {str(e)}")


def write_json(path: str, obj) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as fh:
        fh.write(json.dumps(obj, sort_keys=True, ensure_ascii=False, indent=2))
        fh.write('\n')


def read_jsonl(path: str) -> List[Dict]:
    """Lee un JSONL; las líneas vacías se ignoran y cada registro debe ser un objeto"""
    records = []
    try:
        with open(path, 'r', encoding='utf-8') as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    record = json.loads(line)
                except json.JSONDecodeError as e:
                    raise SchemaError(f"Línea {lineno} de {path} no es JSON: {str(e)}")
                if not isinstance(record, dict):
                    raise SchemaError(f"Línea {lineno} de {path} no es un objeto JSON")
                records.append(record)
    except FileNotFoundError:
        raise SchemaError(f"Archivo no encontrado: {path}")
    return records


def jsonl_text(records: Iterable[Dict]) -> str:
    return ''.join(dumps(r) + '\n' for r in records)


def render_table(df: pd.DataFrame, fmt: str, config: Optional[RunConfig] = None) -> str:
    """
    Renderiza una tabla en Markdown, CSV o JSON con el pie de procedencia
    """
    if fmt not in TABLE_FORMATS:
        raise SchemaError(f"Formato no soportado: {fmt}")

    if fmt == 'json':
        payload = {'rows': json.loads(df.to_json(orient='records'))}
        if config is not None:
            payload['config'] = config.header()
        return json.dumps(payload, sort_keys=True, ensure_ascii=False, indent=2) + '\n'

    if fmt == 'csv':
        text = df.to_csv(index=False, lineterminator='\n')
        if config is not None:
            text += ''.join(f"# {line}\n" for line in config.footer_lines())
        return text

    text = df.to_markdown(index=False) + '\n'
    if config is not None:
        text += '\n' + ''.join(f"_{line}_  \n" for line in config.footer_lines())
    return text


def emit(text: str, out: Optional[str]) -> None:
    """Escribe en el archivo indicado o en stdout"""
    if not out:
        click.echo(text, nl=False)
        return
    directory = os.path.dirname(out)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(out, 'w', encoding='utf-8') as fh:
        fh.write(text)
    logger.info(f"Salida escrita en {out}")
