from typing import Optional


class SlimRagException(Exception):
    """Base exception for the slimrag application"""
    pass

class InvalidInputError(SlimRagException):
    """Raised when an operation's precondition on its inputs is violated"""
    pass

class InvalidGoldError(InvalidInputError):
    """Raised when a gold answer is empty after normalization"""
    pass

class ConfigurationError(SlimRagException):
    """Raised when configuration is invalid"""
    pass

class GatewayError(SlimRagException):
    """Base class for model endpoint failures"""
    pass

class GatewayTransportError(GatewayError):
    """Raised when an endpoint cannot be reached after all retries"""
    pass

class GatewayProtocolError(GatewayError):
    """Raised when an endpoint answers with a non-2xx status"""

    def __init__(self, status_code: int, body: str):
        super().__init__(f"Endpoint returned HTTP {status_code}: {body[:500]}")
        self.status_code = status_code
        self.body = body

class GatewayDecodeError(GatewayError):
    """Raised when an endpoint response is not the expected JSON shape"""
    pass

class EmbeddingIntegrityError(GatewayError):
    """Raised when an embedding batch has inconsistent dimensions"""
    pass

class RenderError(SlimRagException):
    """Raised when a prompt template is rendered with a missing slot"""

    def __init__(self, template_id: str, slot: str):
        super().__init__(f"Template '{template_id}' requires slot '{slot}'")
        self.template_id = template_id
        self.slot = slot

class IndexBuildError(SlimRagException):
    """Raised when the inverted index cannot be built from a corpus"""
    pass

class IndexFormatError(SlimRagException):
    """Raised when a persisted index file is unreadable or has a wrong header"""
    pass

class RewriteParseError(SlimRagException):
    """Raised when rewriter output holds no claim/query units"""

    def __init__(self, message: str, raw_output: Optional[str] = None):
        super().__init__(message)
        self.raw_output = raw_output

class AnnotationParseError(SlimRagException):
    """Raised when annotator output holds no claim triples"""
    pass

class DatasetError(SlimRagException):
    """Raised when a dataset, corpus or answers file cannot be loaded"""
    pass

class EvaluationError(SlimRagException):
    """Raised when a run cannot be evaluated against its dataset"""
    pass

class WorkflowError(SlimRagException):
    """Raised when pipeline execution fails for a question"""
    pass

class MockServerError(SlimRagException):
    """Raised when the mock model server cannot start"""
    pass
