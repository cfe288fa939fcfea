import os
import sys
from typing import List, Optional

import click
from flask import Flask
import logging

# Importar todos los blueprints
from routes.framestream import framestream_bp
from routes.planner import planner_bp
from routes.ceiling import ceiling_bp
from routes.session import session_bp
from routes.drift import drift_bp
from routes.baselines import baselines_bp
from routes.reports import reports_bp
from routes.reproduce import reproduce_bp

# Configurar logging
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)

BASE_DIR = os.path.dirname(os.path.abspath(__file__))


def create_app(test_config: Optional[dict] = None):
    """
    Factory function para crear la aplicación del laboratorio de reuso temporal
    """
    app = Flask(__name__)

    # Configuración por defecto
    app.config.from_mapping(
        TOOL_NAME='reuso-temporal',
        VERSION='1.0.0',
        FIXTURE_DIR=os.path.join(BASE_DIR, 'fixtures'),
        BLOCK_SIZE=28,
        TAU_STATIC=8,
        TAU_NOVEL=48,
        MAX_AGE=4,
        TARGET_SIZE=None,
        DRIFT_GATE=0.03,
        AGREEMENT_GATE=0.85,
        RESIDUAL_TOLERANCE_PP=5.0,
        ECONOMICS_TOLERANCE=0.1,
        PREDICTION_TOLERANCE=0.001,
        RESIDUAL_REPRO_TOLERANCE_PP=0.15,
        DEFAULT_SEED=0,
        WORKERS=1,
    )
    # Variables de entorno REUSO_* (p. ej. REUSO_FIXTURE_DIR)
    app.config.from_prefixed_env('REUSO')
    if test_config:
        app.config.from_mapping(test_config)

    # Registrar blueprints (solo comandos CLI)
    app.register_blueprint(framestream_bp)
    app.register_blueprint(planner_bp)
    app.register_blueprint(ceiling_bp)
    app.register_blueprint(session_bp)
    app.register_blueprint(drift_bp)
    app.register_blueprint(baselines_bp)
    app.register_blueprint(reports_bp)
    app.register_blueprint(reproduce_bp)

    logger.debug("Comandos registrados: synth, plan, ceiling, simulate, audit, baseline, report, reproduce")
    return app


def main(argv: Optional[List[str]] = None) -> int:
    """
    Punto de entrada único: 0 éxito, 1 diferencia de aceptación, 2 error de uso o configuración
    """
    app = create_app()
    args = list(sys.argv[1:] if argv is None else argv)
    with app.app_context():
        try:
            rv = app.cli.main(args=args, prog_name='reuso', standalone_mode=False)
        except click.ClickException as e:
            e.show()
            return e.exit_code
        except click.Abort:
            click.echo('Abortado', err=True)
            return 1
    return rv if isinstance(rv, int) else 0


if __name__ == '__main__':
    sys.exit(main())
