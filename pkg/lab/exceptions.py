"""Errores del laboratorio. Todos heredan de ``EssviMmError``."""


class EssviMmError(Exception):
    """Error base del paquete."""


class ClampActiveError(EssviMmError):
    """El punto de evaluación está sobre un clamp o el wing cap; las derivadas serían laterales."""


class GridTooSmallError(EssviMmError):
    """La malla no tiene suficientes strikes o vencimientos para la penalización."""


class NoConvergenceError(EssviMmError):
    """El solver de eta llegó al límite de iteraciones sin converger."""

    def __init__(self, message, iterations=None, residual=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class EpisodeDoneError(EssviMmError):
    """Se llamó a step() con el episodio ya terminado."""


class ShapeMismatchError(EssviMmError):
    """La entrada de la red no coincide con la dimensión de la primera capa."""


class NonFiniteGradientError(EssviMmError):
    """Algún gradiente de PPO o del warm-start es NaN o infinito."""


class ConfigError(EssviMmError):
    """settings.json o un --set no valida; el mensaje lleva ruta y línea."""

    def __init__(self, message, errors=None):
        super().__init__(message)
        self.errors = errors or {}


class ArtifactError(EssviMmError):
    """Falta un artefacto de la corrida o está vacío."""
