import asyncio
import logging
import re
from typing import Any, Dict, List, Optional, Sequence, TypedDict

from langgraph.graph import END, StateGraph

from ..exceptions import GatewayError, RewriteParseError, SlimRagException, WorkflowError
from ..models import (
    Ablation,
    ClaimDecision,
    Component,
    EndpointRole,
    GenerationPlan,
    HeuristicAnswer,
    PipelineConfig,
    PipelineMode,
    PipelineTrace,
    PlanKind,
    PromptStyle,
    Question,
    ReferenceSet,
    RewriteResult,
    Verdict,
)
from ..prompts import TemplateId, render
from .gateway_service import ModelGateway
from .judgment_service import JudgmentService
from .retrieval_service import RetrievalService
from .rewrite_service import RewriteService, judge_claim_queries
from .trace import ExchangeLog

logger = logging.getLogger(__name__)

_SELF_EVAL_ANSWER = re.compile(r"\b(yes|no)\b", re.IGNORECASE)


class PipelineState(TypedDict, total=False):
    """State carried through the LangGraph workflow for one question"""
    question: Question
    log: ExchangeLog
    heuristic_answer: Optional[HeuristicAnswer]
    verdict: Optional[Verdict]
    rewrite_result: Optional[RewriteResult]
    claim_decisions: List[ClaimDecision]
    surviving_queries: List[str]
    plan: GenerationPlan
    retrieval_queries: List[str]
    final_answer: str
    warnings: List[str]


def route(
    verdict: Optional[Verdict],
    surviving_queries: Sequence[str],
    question_queries: Sequence[str],
    question: str,
) -> GenerationPlan:
    """Direct generation when the answer is known, otherwise retrieval with question queries first"""
    if verdict is not None and verdict.known:
        return GenerationPlan(kind=PlanKind.DIRECT)
    queries = list(question_queries) + list(surviving_queries)
    if not queries:
        queries = [question]
    return GenerationPlan(kind=PlanKind.AUGMENTED, queries_used=queries)


def assemble_context(refs: ReferenceSet) -> str:
    """Number references "[i] title: text", one per line"""
    if len(refs) == 0:
        raise WorkflowError("Cannot assemble a context from an empty reference set")
    lines = []
    for i, entry in enumerate(refs.entries, start=1):
        title = " ".join(entry.document.title.splitlines())
        text = " ".join(entry.document.text.splitlines())
        lines.append(f"[{i}] {title}: {text}")
    return "\n".join(lines)


def parse_self_eval(raw: str) -> Verdict:
    """"Yes" means retrieval is needed; anything unparseable also retrieves"""
    match = _SELF_EVAL_ANSWER.search(raw or "")
    if match is None:
        return Verdict(known=False, raw_output=raw or "", fallback_applied=True)
    return Verdict(known=match.group(1).lower() == "no", raw_output=raw)


class WorkflowService:
    """Service for running the retrieval-routing workflow with LangGraph"""

    def __init__(
        self,
        config: PipelineConfig,
        gateway: ModelGateway,
        retrieval_service: Optional[RetrievalService] = None,
    ):
        self.config = config
        self.gateway = gateway
        self.retrieval_service = retrieval_service
        self.judgment_service = None
        self.rewrite_service = None
        if EndpointRole.JUDGE in config.endpoints:
            self.judgment_service = JudgmentService(gateway, config.endpoint(EndpointRole.JUDGE))
        if EndpointRole.REWRITER in config.endpoints:
            self.rewrite_service = RewriteService(gateway, config.endpoint(EndpointRole.REWRITER))
        self.workflow = None
        self._build_workflow()

    def _build_workflow(self):
        """Build the LangGraph workflow for the configured mode"""
        workflow = StateGraph(PipelineState)
        mode = self.config.mode

        workflow.add_node("route", self._route_node)
        workflow.add_node("retrieve", self._retrieve_node)
        workflow.add_node("generate", self._generate_node)

        if mode == PipelineMode.SLIMPLM:
            workflow.add_node("proxy", self._proxy_node)
            workflow.add_node("assess", self._assess_node)
            workflow.add_node("filter", self._filter_node)
            workflow.set_entry_point("proxy")
            workflow.add_edge("proxy", "assess")
            workflow.add_edge("assess", "filter")
            workflow.add_edge("filter", "route")
        elif mode == PipelineMode.SELF_EVAL:
            workflow.add_node("self_eval", self._self_eval_node)
            workflow.set_entry_point("self_eval")
            workflow.add_edge("self_eval", "route")
        else:
            workflow.set_entry_point("route")

        workflow.add_conditional_edges(
            "route",
            self._next_after_route,
            {"retrieve": "retrieve", "generate": "generate"},
        )
        workflow.add_edge("retrieve", "generate")
        workflow.add_edge("generate", END)

        self.workflow = workflow.compile()

    @staticmethod
    def _next_after_route(state: Dict[str, Any]) -> str:
        return "retrieve" if state["plan"].kind == PlanKind.AUGMENTED else "generate"

    @staticmethod
    def _warn(state: Dict[str, Any], warnings: List[str], message: str) -> List[str]:
        logger.warning(f"[{state['question'].id}] {message}")
        return warnings + [message]

    async def _proxy_node(self, state: Dict[str, Any]) -> Dict[str, Any]:
        """Step 1: the proxy model answers the question on its own"""
        question: Question = state["question"]
        endpoint = self.config.endpoint(EndpointRole.PROXY)
        messages = render(TemplateId.VANILLA, {"question": question.text})
        try:
            exchange = await self.gateway.chat(endpoint, messages)
        except GatewayError as e:
            warnings = self._warn(state, state.get("warnings", []), f"proxy failed: {e}")
            return {"heuristic_answer": None, "warnings": warnings}
        state["log"].record(Component.PROXY, endpoint.role, exchange)
        answer = HeuristicAnswer(
            question_id=question.id,
            text=exchange.response_text,
            completion_tokens=exchange.completion_tokens,
        )
        return {"heuristic_answer": answer}

    async def _assess_node(self, state: Dict[str, Any]) -> Dict[str, Any]:
        """Step 2: judgment and rewrite, run concurrently on the heuristic answer"""
        question: Question = state["question"]
        answer: Optional[HeuristicAnswer] = state.get("heuristic_answer")
        warnings = state.get("warnings", [])
        log: ExchangeLog = state["log"]

        if answer is None or not answer.text.strip():
            warnings = self._warn(state, warnings, "no heuristic answer; retrieving with the question")
            return {
                "verdict": Verdict(known=False, raw_output="", fallback_applied=True),
                "rewrite_result": None,
                "warnings": warnings,
            }

        async def skipped():
            return None

        if self.config.has_ablation(Ablation.NO_JUDGMENT):
            judge_call = skipped()
        else:
            judge_call = self.judgment_service.judge(question.text, answer.text, log)
        if self.config.has_ablation(Ablation.NO_REWRITE):
            rewrite_call = skipped()
        else:
            rewrite_call = self.rewrite_service.rewrite(question.text, answer.text, log)

        verdict, rewrite_result = await asyncio.gather(judge_call, rewrite_call, return_exceptions=True)

        if isinstance(verdict, SlimRagException):
            warnings = self._warn(state, warnings, f"judge failed, retrieving: {verdict}")
            verdict = Verdict(known=False, raw_output="", fallback_applied=True)
        elif isinstance(verdict, BaseException):
            raise verdict
        elif verdict is not None and verdict.fallback_applied:
            warnings = self._warn(state, warnings, "unparseable judge output, retrieving")

        if isinstance(rewrite_result, SlimRagException):
            raw = rewrite_result.raw_output if isinstance(rewrite_result, RewriteParseError) else ""
            warnings = self._warn(state, warnings, f"rewrite failed: {rewrite_result}")
            rewrite_result = RewriteResult(question_queries=[question.text], raw_output=raw or "")
        elif isinstance(rewrite_result, BaseException):
            raise rewrite_result

        return {"verdict": verdict, "rewrite_result": rewrite_result, "warnings": warnings}

    async def _filter_node(self, state: Dict[str, Any]) -> Dict[str, Any]:
        """Claim-based query filter: keep only claim queries the judge does not consider known"""
        rewrite_result: Optional[RewriteResult] = state.get("rewrite_result")
        if rewrite_result is None or not rewrite_result.claim_queries:
            return {"claim_decisions": [], "surviving_queries": []}

        pairs = rewrite_result.claim_queries
        if self.config.has_ablation(Ablation.NO_FILTER):
            decisions = [ClaimDecision(claim_query=p, kept=True) for p in pairs]
        else:
            log: ExchangeLog = state["log"]

            async def judge_fn(query: str, claim: str) -> Verdict:
                return await self.judgment_service.judge(query, claim, log)

            decisions = await judge_claim_queries(pairs, judge_fn)

        warnings = state.get("warnings", [])
        for decision in decisions:
            if decision.judge_failed:
                warnings = self._warn(
                    state, warnings, f"claim judge failed, keeping query {decision.claim_query.query!r}"
                )
        return {
            "claim_decisions": decisions,
            "surviving_queries": [d.claim_query.query for d in decisions if d.kept],
            "warnings": warnings,
        }

    async def _self_eval_node(self, state: Dict[str, Any]) -> Dict[str, Any]:
        """The reader decides for itself whether it needs retrieval"""
        question: Question = state["question"]
        endpoint = self.config.endpoint(EndpointRole.READER)
        messages = render(TemplateId.SELF_EVAL, {"question": question.text})
        try:
            exchange = await self.gateway.chat(endpoint, messages, temperature=0.0)
        except GatewayError as e:
            return {
                "verdict": Verdict(known=False, raw_output="", fallback_applied=True),
                "warnings": self._warn(state, state.get("warnings", []), f"self-eval failed, retrieving: {e}"),
            }
        state["log"].record(Component.JUDGE, endpoint.role, exchange)
        return {"verdict": parse_self_eval(exchange.response_text)}

    async def _route_node(self, state: Dict[str, Any]) -> Dict[str, Any]:
        question: Question = state["question"]
        mode = self.config.mode
        if mode in (PipelineMode.VANILLA, PipelineMode.COT):
            plan = GenerationPlan(kind=PlanKind.DIRECT)
        elif mode == PipelineMode.DIRECT_RAG:
            plan = GenerationPlan(kind=PlanKind.AUGMENTED, queries_used=[question.text])
        elif mode == PipelineMode.SELF_EVAL:
            plan = route(state.get("verdict"), [], [question.text], question.text)
        else:
            rewrite_result = state.get("rewrite_result")
            question_queries = rewrite_result.question_queries if rewrite_result else []
            plan = route(
                state.get("verdict"),
                state.get("surviving_queries", []),
                question_queries,
                question.text,
            )
        return {"plan": plan}

    async def _retrieve_node(self, state: Dict[str, Any]) -> Dict[str, Any]:
        plan: GenerationPlan = state["plan"]
        if self.retrieval_service is None:
            raise WorkflowError("Retrieval requested but no index is loaded")

        warnings = list(state.get("warnings", []))
        queries = list(dict.fromkeys(plan.queries_used))
        references = await self.retrieval_service.retrieve(
            queries, self.config.reference_budget, warnings
        )
        if len(references) == 0:
            warnings = self._warn(state, warnings, "no references retrieved; generating directly")
            plan = GenerationPlan(kind=PlanKind.DIRECT, queries_used=plan.queries_used)
        else:
            plan = plan.model_copy(update={"references": references})
        return {"plan": plan, "retrieval_queries": queries, "warnings": warnings}

    def _reader_messages(self, question: Question, plan: GenerationPlan):
        if plan.kind == PlanKind.AUGMENTED:
            template = (
                TemplateId.RAG_LONG
                if self.config.prompt_style == PromptStyle.LONG_FORM
                else TemplateId.RAG_SHORT
            )
            return render(
                template,
                {"reference": assemble_context(plan.references), "question": question.text},
            )
        template = TemplateId.COT if self.config.mode == PipelineMode.COT else TemplateId.VANILLA
        return render(template, {"question": question.text})

    async def _generate_node(self, state: Dict[str, Any]) -> Dict[str, Any]:
        """Final answer from the reader, with or without references"""
        question: Question = state["question"]
        endpoint = self.config.endpoint(EndpointRole.READER)
        messages = self._reader_messages(question, state["plan"])
        try:
            exchange = await self.gateway.chat(endpoint, messages)
        except GatewayError as e:
            raise WorkflowError(f"Reader failed for question {question.id}: {e}")
        state["log"].record(Component.READER, endpoint.role, exchange)
        return {"final_answer": exchange.response_text}

    async def run_question(self, question: Question) -> PipelineTrace:
        """Run the configured mode for one question and return its full trace"""
        log = ExchangeLog()
        initial_state: PipelineState = {"question": question, "log": log, "warnings": []}
        try:
            final_state = await self.workflow.ainvoke(initial_state)
        except SlimRagException:
            raise
        except Exception as e:
            raise WorkflowError(f"Workflow execution failed for {question.id}: {e}")

        return PipelineTrace(
            question_id=question.id,
            mode=self.config.mode,
            heuristic_answer=final_state.get("heuristic_answer"),
            verdict=final_state.get("verdict"),
            rewrite_result=final_state.get("rewrite_result"),
            claim_decisions=final_state.get("claim_decisions", []),
            surviving_queries=final_state.get("surviving_queries", []),
            plan=final_state["plan"],
            retrieval_queries=final_state.get("retrieval_queries", []),
            final_answer=final_state.get("final_answer", ""),
            exchanges=log.exchanges,
            warnings=final_state.get("warnings", []),
        )

    def is_healthy(self) -> bool:
        """Check if workflow is ready"""
        return self.workflow is not None
