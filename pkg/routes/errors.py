"""
Jerarquía de errores del laboratorio de reuso temporal
Cada módulo lanza su propia subclase para que la CLI pueda reportar el origen exacto
"""

import click


class ReusoError(Exception):
    """Error base de todos los módulos"""


class ConfigurationError(ReusoError):
    """Parámetros de configuración inválidos (tamaños de bloque, umbrales, tolerancias)"""


class SchemaError(ReusoError):
    """Entrada JSON/JSONL que no respeta el esquema esperado"""


class FrameStreamError(ReusoError):
    """Error base de carga y síntesis de secuencias de frames"""


class ManifestError(FrameStreamError):
    """Manifiesto ilegible o con formato incorrecto"""


class FrameFileMissingError(FrameStreamError):
    """Un frame listado en el manifiesto no existe"""

    def __init__(self, index: int, path: str):
        super().__init__(f"Frame {index} no encontrado: {path}")
        self.index = index
        self.path = path


class PPMHeaderError(FrameStreamError):
    """Cabecera PPM (P6) mal formada"""

    def __init__(self, index: int, path: str, reason: str):
        super().__init__(f"Cabecera PPM inválida en frame {index} ({path}): {reason}")
        self.index = index
        self.path = path


class DimensionMismatchError(FrameStreamError):
    """Frames con dimensiones distintas dentro de un mismo stream"""

    def __init__(self, index: int, path: str, expected: tuple, found: tuple):
        super().__init__(
            f"Dimensiones distintas en frame {index} ({path}): "
            f"esperado {expected[0]}x{expected[1]}, encontrado {found[0]}x{found[1]}"
        )
        self.index = index
        self.path = path


class SynthSpecError(FrameStreamError):
    """Especificación sintética inconsistente (movers fuera de cuadro, tamaños inválidos)"""


class PlannerError(ReusoError):
    """Error del planificador temporal"""


class CeilingError(ReusoError):
    """Entradas fuera de dominio para las fórmulas de techo"""


class SessionError(ReusoError):
    """Política, agenda o transición de caché inválida"""


class DriftError(ReusoError):
    """Error en la auditoría de deriva pareada"""


class BaselineError(ReusoError):
    """Error en las políticas de selección de frames"""


class CommandError(click.ClickException):
    """Error de uso o configuración reportado por la CLI (código de salida 2)"""

    exit_code = 2
