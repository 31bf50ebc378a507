import logging
from typing import Dict, Mapping, Optional, Sequence

from ..exceptions import InvalidInputError
from ..models import (
    Component,
    CostLedger,
    CostTable,
    EndpointRole,
    ModelEndpoint,
    PipelineTrace,
    QuestionResult,
)

logger = logging.getLogger(__name__)

_EXTRA_COMPONENTS = (Component.PROXY, Component.REWRITER, Component.JUDGE)


def ledger_from_tokens(
    tokens: Mapping[Component, float],
    weights: Mapping[Component, float],
    approximate: bool = False,
) -> CostLedger:
    """Ledger arithmetic on component token totals with one weight per component"""
    reader = tokens.get(Component.READER, 0.0)
    weighted = sum(tokens.get(c, 0.0) * weights.get(c, 1.0) for c in _EXTRA_COMPONENTS)
    return CostLedger(
        reader=reader,
        proxy=tokens.get(Component.PROXY, 0.0),
        rewriter=tokens.get(Component.REWRITER, 0.0),
        judge=tokens.get(Component.JUDGE, 0.0),
        weighted_extra_cost=weighted,
        extra_cost_ratio=weighted / reader if reader else 0.0,
        approximate=approximate,
    )


def account_cost(
    trace: PipelineTrace,
    endpoints: Mapping[EndpointRole, ModelEndpoint],
) -> CostLedger:
    """Tokens per component and the extra cost weighted by each serving endpoint's cost weight"""
    if not trace.exchanges_for(Component.READER):
        raise InvalidInputError(f"Trace {trace.question_id} has no reader exchange")

    tokens: Dict[Component, float] = {c: 0.0 for c in Component}
    weighted: Dict[Component, float] = {c: 0.0 for c in Component}
    approximate = False
    for tagged in trace.exchanges:
        used = tagged.exchange.total_tokens
        endpoint = endpoints.get(tagged.endpoint_role)
        tokens[tagged.component] += used
        weighted[tagged.component] += used * (endpoint.cost_weight if endpoint is not None else 1.0)
        approximate = approximate or tagged.exchange.approximate_usage

    # one component can be served by several endpoints (self-eval judges on the reader)
    weights = {c: weighted[c] / tokens[c] for c in Component if tokens[c]}
    return ledger_from_tokens(tokens, weights, approximate=approximate)


def cost_table(results: Sequence[QuestionResult]) -> CostTable:
    """Mean per-question tokens: reader (chat), each extra component, and their raw total"""
    ledgers = [r.cost for r in results if r.succeeded and r.cost is not None]
    if not ledgers:
        return CostTable()
    n = len(ledgers)

    def mean(values) -> float:
        return sum(values) / n

    return CostTable(
        chat=mean(l.reader for l in ledgers),
        proxy=mean(l.proxy for l in ledgers),
        rewrite=mean(l.rewriter for l in ledgers),
        judge=mean(l.judge for l in ledgers),
        total=mean(l.extra_tokens for l in ledgers),
        weighted_extra_cost=mean(l.weighted_extra_cost for l in ledgers),
        extra_cost_ratio=mean(l.extra_cost_ratio for l in ledgers),
    )


def table_row(table: CostTable, name: Optional[str] = None) -> Dict[str, object]:
    row = {
        "Chat": round(table.chat, 2),
        "Proxy": round(table.proxy, 2),
        "Rewrite": round(table.rewrite, 2),
        "Judge": round(table.judge, 2),
        "Total": round(table.total, 2),
        "WeightedExtra": round(table.weighted_extra_cost, 4),
        "ExtraRatio": round(table.extra_cost_ratio, 4),
    }
    if name is not None:
        row = {"Dataset": name, **row}
    return row
