"""
Manejo de errores para el pipeline de reconocimiento de estructura de tablas
Incluye clasificación de errores, contexto completo y códigos de salida del CLI
"""

from enum import Enum
from datetime import datetime
from typing import Dict, Any


class TSRErrorType(Enum):
    """Tipos de errores del pipeline"""
    INVALID_ARGUMENT = "invalid_argument"
    SCHEMA = "schema"
    LATTICE = "lattice"
    NO_SEPARATION_LINES = "no_separation_lines"
    INVARIANT = "invariant"
    ACCEPTANCE = "acceptance"
    IO = "io"


class TSRError(Exception):
    """Excepción personalizada para errores del pipeline"""

    def __init__(self, message: str, error_type: TSRErrorType,
                 error_code: str = None, stage: str = None,
                 details: Dict = None):
        super().__init__(message)
        self.message = message
        self.error_type = error_type
        self.error_code = error_code or error_type.value
        self.stage = stage
        self.details = details or {}
        self.timestamp = datetime.now()

    def __str__(self) -> str:
        if self.stage:
            return f"[{self.stage}] {self.message}"
        return self.message

    def to_dict(self) -> Dict[str, Any]:
        """Convierte el error a diccionario para logging y reportes"""
        return {
            'message': self.message,
            'error_type': self.error_type.value,
            'error_code': self.error_code,
            'stage': self.stage,
            'details': self.details,
            'timestamp': self.timestamp.isoformat()
        }


# Códigos de salida del CLI
EXIT_OK = 0
EXIT_INPUT = 2
EXIT_INVARIANT = 3
EXIT_ACCEPTANCE = 4


class TSRErrorHandler:
    """Manejador centralizado de errores del pipeline"""

    @staticmethod
    def invalid_argument(message: str, **details) -> TSRError:
        return TSRError(message, TSRErrorType.INVALID_ARGUMENT, details=details)

    @staticmethod
    def invariant(message: str, **details) -> TSRError:
        return TSRError(message, TSRErrorType.INVARIANT, details=details)

    @staticmethod
    def no_separation_lines(axis: str) -> TSRError:
        return TSRError(
            f"no separation lines: ningún punto de inicio detectado en el eje {axis}",
            TSRErrorType.NO_SEPARATION_LINES,
            details={'axis': axis}
        )

    @staticmethod
    def parse_validation_error(exc: Exception, source: str = None) -> TSRError:
        """Convierte un ValidationError de pydantic en un error de esquema que nombra el campo"""
        errors = exc.errors() if hasattr(exc, 'errors') else []
        if errors:
            first = errors[0]
            field = '.'.join(str(part) for part in first.get('loc', ())) or '<root>'
            message = f"Error de esquema en el campo '{field}': {first.get('msg', 'valor inválido')}"
        else:
            field = None
            message = f"Error de esquema: {exc}"
        if source:
            message = f"{source}: {message}"
        return TSRError(
            message=message,
            error_type=TSRErrorType.SCHEMA,
            error_code='schema',
            details={'field': field, 'source': source, 'errors': [
                {'loc': [str(p) for p in e.get('loc', ())], 'msg': e.get('msg')} for e in errors
            ]}
        )

    @staticmethod
    def wrap_stage(exc: Exception, stage: str) -> TSRError:
        """Propaga un error de una etapa añadiendo el nombre de la etapa"""
        if isinstance(exc, TSRError):
            if exc.stage is None:
                exc.stage = stage
            return exc
        return TSRError(
            message=f"{type(exc).__name__}: {exc}",
            error_type=TSRErrorType.INVALID_ARGUMENT,
            error_code='stage_failure',
            stage=stage,
            details={'exception_type': type(exc).__name__}
        )

    @staticmethod
    def exit_code(error: TSRError) -> int:
        """Calcula el código de salida del CLI según el tipo de error"""
        if error.error_type == TSRErrorType.INVARIANT:
            return EXIT_INVARIANT
        elif error.error_type == TSRErrorType.ACCEPTANCE:
            return EXIT_ACCEPTANCE
        else:
            # Errores de entrada, esquema, E/S y geometría
            return EXIT_INPUT
