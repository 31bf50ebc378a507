"""
Services Layer - Business Logic Components

Model gateway, retrieval, judgment, rewrite, the LangGraph routing workflow,
cost accounting, evaluation and dataset runs.
"""

from .gateway_service import ModelGateway
from .retrieval_service import RetrievalService, merge_references
from .judgment_service import JudgmentService, collect_labels, parse_verdict
from .rewrite_service import RewriteService, filter_claim_queries, parse_rewrite_output
from .workflow_service import WorkflowService, assemble_context, route
from .cost_service import account_cost
from .run_service import run_dataset

__all__ = [
    "ModelGateway",
    "RetrievalService",
    "merge_references",
    "JudgmentService",
    "collect_labels",
    "parse_verdict",
    "RewriteService",
    "filter_claim_queries",
    "parse_rewrite_output",
    "WorkflowService",
    "assemble_context",
    "route",
    "account_cost",
    "run_dataset",
]
