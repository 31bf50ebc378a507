"""
Prompt templates for every model call the pipeline makes.

The judgment and rewrite templates reproduce the instruction format the judge
and rewriter models are tuned on, so their wording must not drift.
"""

from enum import Enum
from typing import Dict, List, Mapping, Optional, Tuple

from .exceptions import RenderError
from .models import ChatMessage, MessageRole


class TemplateId(str, Enum):
    RAG_SHORT = "rag_short"
    RAG_LONG = "rag_long"
    JUDGMENT = "judgment"
    REWRITE = "rewrite"
    VANILLA = "vanilla"
    COT = "cot"
    SELF_EVAL = "self_eval"
    ANNOTATION_GPT4 = "annotation_gpt4"


_STRUCTURED_SYS = (
    "<SYS> You are a helpful assistant. Your task is to parse user input into structured "
    "formats and accomplish the task according to the heuristic answer. </SYS>"
)

_RAG_HEAD = (
    "<<SYS>>\n\n"
    "Now, based on the following reference and your knowledge, please answer the question "
    "more succinctly and professionally. The reference is delimited by triple brackets [[[]]]. "
    "The question is delimited by triple parentheses ((())). "
)

_RAG_TAIL = (
    "\n\n<</SYS>>\n\n"
    "Reference: [[[{reference}]]], \n\n"
    "question: ((({question})))"
)

ANNOTATION_SYSTEM_PROMPT = (
    "<<SYS>>You are asked to first separate a given text by claims and then provide a search "
    "query to verify each claim if needed.\n"
    "Here are some requirements:\n"
    "1. The separation is conducted according to the meaning and each claim should be be brief "
    "and contain as one key claim.\n"
    "2. Do not add any hallucinated information or miss any information.\n"
    "3. The claims should be independent and self-contained, and the claims should be fully "
    "described without using pronouns such as “he”, “this”, or “that”.\n"
    "4. The query is derived from it's corresponding claim and the original user question, and "
    "should be useful to check the factuality of the claim.\n"
    "5. If the claim does not contain any fact relevant with the original user question, or only "
    "contains simple commen senses, then search is not required.\n"
    "6. The final return should strictly follow the given format.\n"
    "Like this: <Claims> <Claim(claim1)> <Search(True/False)> <Query(query1)> "
    "<Claim(claim2)> <Search(True/False)> <Query(query2)> "
    "<Claim(claim3)><Search(True/False)><Query(query3)>......</Claims> <</SYS>>"
)

_SELF_EVAL_SHOTS = (
    "Decide whether you need to consult external references to answer the question "
    "correctly. Answer with Yes or No only.\n\n"
    "Question: Who wrote the novel Pride and Prejudice?\n"
    "Need retrieval: No\n\n"
    "Question: How many goals were scored in the 2019 Copa America final?\n"
    "Need retrieval: Yes\n\n"
    "Question: What is the boiling point of water at sea level in Celsius?\n"
    "Need retrieval: No\n\n"
    "Question: Who was the mayor of the town of Tromso in 1985?\n"
    "Need retrieval: Yes\n\n"
    "Question: {question}\n"
    "Need retrieval:"
)

COT_INSTRUCTION = "Let's think step-by-step to derive the final answer."

# template id -> (body, required slots)
_TEMPLATES: Dict[TemplateId, Tuple[str, Tuple[str, ...]]] = {
    TemplateId.RAG_SHORT: (
        _RAG_HEAD + "You should include as many possible answers as you can." + _RAG_TAIL,
        ("reference", "question"),
    ),
    TemplateId.RAG_LONG: (
        _RAG_HEAD + "You are not allowed to add fabrications or hallucinations." + _RAG_TAIL,
        ("reference", "question"),
    ),
    TemplateId.JUDGMENT: (
        _STRUCTURED_SYS + "\n"
        "Heuristic answer: {heuristic_answer}\n"
        "Question: {question}\n"
        "Retrieval Necessity Judgment Output:",
        ("heuristic_answer", "question"),
    ),
    TemplateId.REWRITE: (
        _STRUCTURED_SYS + "\n"
        "Heuristic answer: {heuristic_answer}\n"
        "Question: {question}\n"
        "Query Rewrite Output:",
        ("heuristic_answer", "question"),
    ),
    TemplateId.VANILLA: ("{question}", ("question",)),
    TemplateId.COT: ("{question}\n\n" + COT_INSTRUCTION, ("question",)),
    TemplateId.SELF_EVAL: (_SELF_EVAL_SHOTS, ("question",)),
    TemplateId.ANNOTATION_GPT4: (
        ANNOTATION_SYSTEM_PROMPT + "\n"
        "Question: {question}\n"
        "Text: {heuristic_answer}",
        ("question", "heuristic_answer"),
    ),
}


def required_slots(template_id: TemplateId) -> Tuple[str, ...]:
    return _TEMPLATES[TemplateId(template_id)][1]


def render_text(template_id: TemplateId, slots: Mapping[str, Optional[str]]) -> str:
    template_id = TemplateId(template_id)
    body = _TEMPLATES[template_id][0]
    required = required_slots(template_id)
    for slot in required:
        if slots.get(slot) is None:
            raise RenderError(template_id.value, slot)
    return body.format(**{slot: slots[slot] for slot in required})


def render(template_id: TemplateId, slots: Mapping[str, Optional[str]]) -> List[ChatMessage]:
    """Render a template into the message list sent to a chat endpoint."""
    return [ChatMessage(role=MessageRole.USER, content=render_text(template_id, slots))]
