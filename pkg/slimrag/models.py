from enum import Enum
from typing import Dict, List, Optional, Union
from urllib.parse import urlparse

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class FrozenModel(BaseModel):
    """Base for value objects that must not change after construction"""
    model_config = ConfigDict(frozen=True)


# --- core domain -----------------------------------------------------------

class Question(FrozenModel):
    """A dataset question with its gold answers"""
    id: str
    text: str
    gold_short_answers: List[str] = Field(default_factory=list)
    gold_long_answer: Optional[str] = None

    @field_validator("text")
    @classmethod
    def _text_not_empty(cls, value: str) -> str:
        if not value.strip():
            raise ValueError("question text must not be empty")
        return value


class Document(FrozenModel):
    """A corpus entry"""
    doc_id: str
    title: str = ""
    text: str

    @field_validator("text")
    @classmethod
    def _text_not_empty(cls, value: str) -> str:
        if not value.strip():
            raise ValueError("document text must not be empty")
        return value


class HeuristicAnswer(FrozenModel):
    """Answer produced by the proxy model for one question"""
    question_id: str
    text: str
    completion_tokens: int = Field(default=0, ge=0)


# --- model gateway ---------------------------------------------------------

class EndpointRole(str, Enum):
    PROXY = "proxy"
    JUDGE = "judge"
    REWRITER = "rewriter"
    READER = "reader"
    EMBEDDER = "embedder"


class ModelEndpoint(FrozenModel):
    """Connection details and relative cost of one model behind an HTTP endpoint"""
    role: EndpointRole
    base_url: str
    model_name: str = Field(alias="model")
    api_key_env: str = "SLIMRAG_API_KEY"
    cost_weight: float = Field(default=1.0, gt=0)
    temperature: Optional[float] = Field(default=None, ge=0)
    max_tokens: Optional[int] = Field(default=None, gt=0)

    model_config = ConfigDict(frozen=True, populate_by_name=True, protected_namespaces=())

    @field_validator("base_url")
    @classmethod
    def _absolute_url(cls, value: str) -> str:
        parsed = urlparse(value)
        if parsed.scheme not in ("http", "https") or not parsed.netloc:
            raise ValueError(f"base_url must be an absolute http(s) URL, got {value!r}")
        return value.rstrip("/")

    def default_temperature(self) -> float:
        if self.temperature is not None:
            return self.temperature
        # structured-output roles decode greedily
        if self.role in (EndpointRole.JUDGE, EndpointRole.REWRITER):
            return 0.0
        return 0.7


class MessageRole(str, Enum):
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"


class ChatMessage(FrozenModel):
    role: MessageRole
    content: str


class ChatExchange(FrozenModel):
    """One completed chat-completion call"""
    messages: List[ChatMessage]
    temperature: float = Field(ge=0)
    max_tokens: int = Field(gt=0)
    response_text: str
    prompt_tokens: int = Field(ge=0)
    completion_tokens: int = Field(ge=0)
    approximate_usage: bool = False

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens


class Component(str, Enum):
    """Pipeline component an exchange is accounted to"""
    READER = "reader"
    PROXY = "proxy"
    REWRITER = "rewriter"
    JUDGE = "judge"


class TaggedExchange(FrozenModel):
    component: Component
    endpoint_role: EndpointRole
    exchange: ChatExchange


# --- retrieval -------------------------------------------------------------

class BM25Params(FrozenModel):
    k1: float = Field(default=1.2, gt=0)
    b: float = Field(default=0.75, ge=0, le=1)


class RetrievalStage(str, Enum):
    BM25 = "bm25"
    RERANKED = "reranked"


class ScoredDocument(FrozenModel):
    document: Document
    score: float
    source_query: str
    stage: RetrievalStage = RetrievalStage.BM25


class ReferenceSet(FrozenModel):
    """Merged references handed to the reader"""
    entries: List[ScoredDocument] = Field(default_factory=list)
    per_query_provenance: Dict[str, List[str]] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _no_duplicates(self) -> "ReferenceSet":
        ids = [entry.document.doc_id for entry in self.entries]
        if len(ids) != len(set(ids)):
            raise ValueError("reference set contains duplicate doc_ids")
        return self

    def doc_ids(self) -> List[str]:
        return [entry.document.doc_id for entry in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


# --- judgment --------------------------------------------------------------

class Verdict(FrozenModel):
    known: bool
    raw_output: str
    fallback_applied: bool = False


class KnownLabel(str, Enum):
    KNOWN_TRUE = "known_true"
    KNOWN_FALSE = "known_false"


class LabelConfig(FrozenModel):
    threshold: float = Field(default=0.5, ge=0, le=1)
    seed: int = 0
    balance: bool = True


class LabeledSample(FrozenModel):
    question: Question
    heuristic_answer: HeuristicAnswer
    ratio: float = Field(ge=0, le=1)
    label: KnownLabel
    kept: bool = True

    def to_record(self) -> Dict[str, object]:
        return {
            "question_id": self.question.id,
            "ratio": self.ratio,
            "label": self.label.value,
            "kept": self.kept,
        }


class LabelRejection(FrozenModel):
    question_id: str
    reason: str


class LabelCollection(FrozenModel):
    """Labels plus the known / unknown / dropped tally"""
    samples: List[LabeledSample]
    rejected: List[LabelRejection] = Field(default_factory=list)

    @property
    def known_count(self) -> int:
        return sum(1 for s in self.samples if s.kept and s.label == KnownLabel.KNOWN_TRUE)

    @property
    def unknown_count(self) -> int:
        return sum(1 for s in self.samples if s.kept and s.label == KnownLabel.KNOWN_FALSE)

    @property
    def dropped_count(self) -> int:
        return sum(1 for s in self.samples if not s.kept)


# --- rewrite ---------------------------------------------------------------

RESERVED_TOKENS = ("<Claim>", "<Query>")


class ClaimQuery(FrozenModel):
    claim: str
    query: str = ""
    needs_search: Optional[bool] = None

    @model_validator(mode="after")
    def _check_texts(self) -> "ClaimQuery":
        if not self.claim:
            raise ValueError("claim must not be empty")
        if not self.query and self.needs_search is not False:
            raise ValueError("query may only be empty when search is not needed")
        for token in RESERVED_TOKENS:
            if token in self.claim or token in self.query:
                raise ValueError(f"reserved token {token} inside claim/query text")
        return self


class RewriteResult(FrozenModel):
    question_queries: List[str] = Field(default_factory=list)
    claim_queries: List[ClaimQuery] = Field(default_factory=list)
    raw_output: str = ""


class ClaimDecision(FrozenModel):
    """Outcome of the claim-based filter for one claim/query pair"""
    claim_query: ClaimQuery
    kept: bool
    judge_failed: bool = False


# --- pipeline --------------------------------------------------------------

class PipelineMode(str, Enum):
    SLIMPLM = "slimplm"
    VANILLA = "vanilla"
    COT = "cot"
    DIRECT_RAG = "direct_rag"
    SELF_EVAL = "self_eval"


class PromptStyle(str, Enum):
    SHORT_FORM = "short_form"
    LONG_FORM = "long_form"


class Ablation(str, Enum):
    NO_REWRITE = "no_rewrite"
    NO_JUDGMENT = "no_judgment"
    NO_FILTER = "no_filter"


REQUIRED_ROLES: Dict[PipelineMode, List[EndpointRole]] = {
    PipelineMode.SLIMPLM: [
        EndpointRole.PROXY, EndpointRole.JUDGE, EndpointRole.REWRITER,
        EndpointRole.READER, EndpointRole.EMBEDDER,
    ],
    PipelineMode.VANILLA: [EndpointRole.READER],
    PipelineMode.COT: [EndpointRole.READER],
    PipelineMode.DIRECT_RAG: [EndpointRole.READER, EndpointRole.EMBEDDER],
    PipelineMode.SELF_EVAL: [EndpointRole.READER, EndpointRole.EMBEDDER],
}


class PipelineConfig(FrozenModel):
    """Run configuration for the routing pipeline"""
    mode: PipelineMode = PipelineMode.SLIMPLM
    endpoints: Dict[EndpointRole, ModelEndpoint] = Field(default_factory=dict)
    reference_budget: int = Field(default=5, gt=0)
    bm25_depth: int = Field(default=100, gt=0)
    rerank_depth: int = Field(default=5, gt=0)
    prompt_style: PromptStyle = PromptStyle.SHORT_FORM
    concurrency: int = Field(default=4, gt=0)
    ablations: List[Ablation] = Field(default_factory=list)

    @model_validator(mode="before")
    @classmethod
    def _endpoint_roles_from_keys(cls, data):
        if isinstance(data, dict) and isinstance(data.get("endpoints"), dict):
            endpoints = {}
            for role, entry in data["endpoints"].items():
                if isinstance(entry, dict) and "role" not in entry:
                    entry = {**entry, "role": role}
                endpoints[role] = entry
            data = {**data, "endpoints": endpoints}
        return data

    @model_validator(mode="after")
    def _required_endpoints(self) -> "PipelineConfig":
        missing = [r.value for r in REQUIRED_ROLES[self.mode] if r not in self.endpoints]
        if missing:
            raise ValueError(f"mode {self.mode.value} requires endpoints: {', '.join(missing)}")
        for role, endpoint in self.endpoints.items():
            if endpoint.role != role:
                raise ValueError(f"endpoint under key {role.value} declares role {endpoint.role.value}")
        return self

    def endpoint(self, role: EndpointRole) -> ModelEndpoint:
        return self.endpoints[role]

    def has_ablation(self, ablation: Ablation) -> bool:
        return ablation in self.ablations


class PlanKind(str, Enum):
    DIRECT = "direct"
    AUGMENTED = "augmented"


class GenerationPlan(FrozenModel):
    kind: PlanKind
    references: ReferenceSet = Field(default_factory=ReferenceSet)
    queries_used: List[str] = Field(default_factory=list)

    @model_validator(mode="after")
    def _direct_has_no_references(self) -> "GenerationPlan":
        if self.kind == PlanKind.DIRECT and len(self.references) > 0:
            raise ValueError("a direct plan cannot carry references")
        return self


class PipelineTrace(FrozenModel):
    """Everything that happened while answering one question"""
    question_id: str
    mode: PipelineMode
    heuristic_answer: Optional[HeuristicAnswer] = None
    verdict: Optional[Verdict] = None
    rewrite_result: Optional[RewriteResult] = None
    claim_decisions: List[ClaimDecision] = Field(default_factory=list)
    surviving_queries: List[str] = Field(default_factory=list)
    plan: GenerationPlan
    retrieval_queries: List[str] = Field(default_factory=list)
    final_answer: str
    exchanges: List[TaggedExchange] = Field(default_factory=list)
    warnings: List[str] = Field(default_factory=list)

    def exchanges_for(self, component: Component) -> List[TaggedExchange]:
        return [e for e in self.exchanges if e.component == component]

    def reader_prompt(self) -> str:
        readers = self.exchanges_for(Component.READER)
        if not readers:
            return ""
        return "\n".join(m.content for m in readers[0].exchange.messages)


class CostLedger(FrozenModel):
    """Per-component tokens and the weighted extra cost over the reader"""
    reader: float = Field(default=0.0, ge=0)
    proxy: float = Field(default=0.0, ge=0)
    rewriter: float = Field(default=0.0, ge=0)
    judge: float = Field(default=0.0, ge=0)
    weighted_extra_cost: float = 0.0
    extra_cost_ratio: float = 0.0
    approximate: bool = False

    @property
    def extra_tokens(self) -> float:
        return self.proxy + self.rewriter + self.judge


class QuestionResult(FrozenModel):
    """One line of a results file"""
    id: str
    answer: Optional[str] = None
    plan_kind: Optional[PlanKind] = None
    queries: List[str] = Field(default_factory=list)
    cost: Optional[CostLedger] = None
    error: Optional[str] = None

    @property
    def succeeded(self) -> bool:
        return self.error is None


class RunSummary(FrozenModel):
    total: int
    succeeded: int
    failed: int

    @property
    def failure_rate(self) -> float:
        return self.failed / self.total if self.total else 0.0

    @property
    def run_failed(self) -> bool:
        return self.failure_rate > 0.5


# --- evaluation ------------------------------------------------------------

class RougeScore(FrozenModel):
    precision: float = Field(ge=0, le=1)
    recall: float = Field(ge=0, le=1)
    f1: float = Field(ge=0, le=1)


class QuestionScore(FrozenModel):
    id: str
    em: Optional[float] = None
    strict_em: Optional[float] = None
    hit_at_1: Optional[float] = None
    rouge1: Optional[float] = None
    rouge2: Optional[float] = None
    rougeL: Optional[float] = None


class CostTable(FrozenModel):
    """Mean tokens per question for the reader and each extra component"""
    chat: float = 0.0
    proxy: float = 0.0
    rewrite: float = 0.0
    judge: float = 0.0
    total: float = 0.0
    weighted_extra_cost: float = 0.0
    extra_cost_ratio: float = 0.0


class EvalReport(FrozenModel):
    mode: PromptStyle
    sample_count: int
    aggregates: Dict[str, float]
    per_question: List[QuestionScore]
    cost: CostTable


class GapRow(FrozenModel):
    threshold: float
    share_a: float
    share_b: float
    overlap: Optional[float] = None


# --- mock server -----------------------------------------------------------

class MockRule(FrozenModel):
    contains: str
    response: str


class MockScript(FrozenModel):
    """Scripted behaviour of the mock model server"""
    rules: List[MockRule] = Field(default_factory=list)
    default_response: str = Field(default="", alias="default")
    embedding_dim: int = Field(default=64, gt=0)
    latency_ms: int = Field(default=0, ge=0)
    embeddings: Dict[str, List[float]] = Field(default_factory=dict)

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    def respond(self, prompt: str) -> str:
        for rule in self.rules:
            if rule.contains in prompt:
                return rule.response
        return self.default_response


class ChatCompletionRequest(BaseModel):
    model: str = ""
    messages: List[ChatMessage]
    temperature: float = 0.0
    max_tokens: Optional[int] = None


class EmbeddingRequest(BaseModel):
    model: str = ""
    input: Union[str, List[str]]
