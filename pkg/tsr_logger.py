"""
Sistema de logging para el pipeline de estructura de tablas
Maneja logs estructurados (JSON) por etapa, rendimiento, validación y errores
"""

import logging
import os
import json
from datetime import datetime
from typing import Dict, Any, List

from dotenv import load_dotenv

# Cargar variables de entorno (TSR_LOG_DIR, TSR_CONSOLE_LEVEL)
load_dotenv(os.getenv('TSR_ENV_FILE', '.env'))


class TSRLogger:
    """Sistema de logging especializado para el pipeline split-and-merge"""

    def __init__(self, log_dir: str = None):
        self.log_dir = log_dir or os.getenv('TSR_LOG_DIR', 'logs')
        self.logger = self._setup_logger()

    def configure(self, log_dir: str = None):
        """Reconstruye los handlers tras cargar un .env distinto"""
        for handler in list(self.logger.handlers):
            self.logger.removeHandler(handler)
            handler.close()
        self.log_dir = log_dir or os.getenv('TSR_LOG_DIR', 'logs')
        self.logger = self._setup_logger()

    def _setup_logger(self) -> logging.Logger:
        """Configura el sistema de logging"""
        logger = logging.getLogger('table_structure')
        logger.setLevel(logging.DEBUG)
        logger.propagate = False

        # Evitar duplicar handlers
        if logger.handlers:
            return logger

        formatter = logging.Formatter(
            '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
        )

        try:
            os.makedirs(self.log_dir, exist_ok=True)

            # Handler para archivo general
            file_handler = logging.FileHandler(
                os.path.join(self.log_dir, 'table_structure.log'),
                encoding='utf-8'
            )
            file_handler.setLevel(logging.DEBUG)
            file_handler.setFormatter(formatter)

            # Handler para errores
            error_handler = logging.FileHandler(
                os.path.join(self.log_dir, 'table_structure_errors.log'),
                encoding='utf-8'
            )
            error_handler.setLevel(logging.ERROR)
            error_handler.setFormatter(formatter)

            logger.addHandler(file_handler)
            logger.addHandler(error_handler)
        except OSError:
            # Sin directorio de logs escribible: solo consola
            pass

        console_handler = logging.StreamHandler()
        console_handler.setLevel(getattr(logging, os.getenv('TSR_CONSOLE_LEVEL', 'INFO').upper(), logging.INFO))
        console_handler.setFormatter(formatter)
        logger.addHandler(console_handler)

        return logger

    def log_stage(self, stage: str, duration_us: float = None, **sizes):
        """Log de una etapa del pipeline (split, merge, heads...)"""
        log_data = {
            'timestamp': datetime.now().isoformat(),
            'type': 'stage',
            'stage': stage,
            'duration_us': duration_us,
            **sizes
        }
        self.logger.debug(f"Stage: {json.dumps(log_data)}")

    def log_performance(self, operation: str, duration_ms: float,
                        records_processed: int = None, **extra):
        """Log de rendimiento"""
        log_data = {
            'timestamp': datetime.now().isoformat(),
            'type': 'performance',
            'operation': operation,
            'duration_ms': duration_ms,
            'records_processed': records_processed,
            **extra
        }
        self.logger.info(f"Performance: {json.dumps(log_data)}")

    def log_validation(self, kind: str, issues: List[Dict[str, Any]]):
        """Log de reportes de validación (cruces, reparaciones, desacuerdos)"""
        if not issues:
            return
        log_data = {
            'timestamp': datetime.now().isoformat(),
            'type': 'validation',
            'kind': kind,
            'issue_count': len(issues),
            'issues': issues[:20]
        }
        self.logger.warning(f"Validation: {json.dumps(log_data, default=str)}")

    def log_error(self, error_type: str, error_message: str, context: Dict = None,
                  error_code: str = None, exception: Exception = None):
        """Log de errores con contexto completo"""
        log_data = {
            'timestamp': datetime.now().isoformat(),
            'type': 'error',
            'error_type': error_type,
            'error_message': error_message,
            'error_code': error_code,
            'context': context or {}
        }

        if exception:
            log_data['exception_type'] = type(exception).__name__
            log_data['exception_details'] = str(exception)

        self.logger.error(f"Error Details: {json.dumps(log_data, indent=2, default=str)}")

    def log_command(self, command: str, arguments: Dict[str, Any], exit_code: int,
                    duration_ms: float = None):
        """Log de la ejecución de un comando del CLI"""
        log_data = {
            'timestamp': datetime.now().isoformat(),
            'type': 'command',
            'command': command,
            'arguments': arguments,
            'exit_code': exit_code,
            'duration_ms': duration_ms
        }
        if exit_code:
            self.logger.error(f"Command Failed: {json.dumps(log_data, default=str)}")
        else:
            self.logger.info(f"Command: {command} - exit {exit_code}")


# Instancia global del logger
tsr_logger = TSRLogger()
