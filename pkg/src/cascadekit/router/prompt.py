"""Scoring prompt rendering and tolerant parsing of the JSON verdict."""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from typing import Any, Literal

CONFIDENCE_FIELD = "3_Confidence"
ELICITATION = "What is the probability that your scoring judgment is correct? 0 = no confidence, 100 = certain."

# The small-model variant. The large-model variant drops every line that
# mentions the confidence field and nothing else, so the two differ only there.
SCORING_TEMPLATE = """\
<Role>
You are an evaluator reviewing a conversation between an AI assessment proctor and a student. Determine whether the student satisfied the evaluation criterion based on their responses. Do NOT continue the conversation. Do NOT roleplay as the proctor or the student.
</Role>

<Problem>{problem}</Problem>
<StudentAnswer>{student_answer}</StudentAnswer>
<Criterion>{criterion}</Criterion>
<Conversation>
{conversation}
</Conversation>

<Requirements>
 - Do NOT mark the criterion as satisfied unless you are confident that the student has demonstrated understanding of the criterion.
 - Students do not need to use the EXACT concept terms in the criterion, but can use synonymous language.
 - Evaluate based on the full context: the problem, the student's answer, and their conversation.
 - Do not assume the student understands the criterion based on a correct answer to the Problem.
 - Don't mark the criterion as satisfied if the student is describing a step in solving the problem (unless that is necessary to demonstrate understanding of the criterion).
</Requirements>

Respond with a JSON object matching this schema:

{
  "1_Reasoning": "Brief reasoning about whether the criterion is satisfied (25 words max).",
  "2_IsSatisfied": "<true or false>",
  "3_Confidence": "<integer 0-100>"
}

 - 1_Reasoning (string, required): Brief reasoning about whether the student has satisfied the criterion. Keep to 25 words at most.
 - 2_IsSatisfied (boolean, required): true if the criterion has been satisfied, false otherwise.
 - 3_Confidence (integer, required): {elicitation}

Return ONLY the JSON object, no other text.
"""

_VARIABLES = ("problem", "student_answer", "criterion", "conversation")
_PLACEHOLDER = re.compile(r"\{(" + "|".join(_VARIABLES) + r")\}")


def _template(include_confidence: bool) -> str:
    text = SCORING_TEMPLATE.replace("{elicitation}", ELICITATION)
    if include_confidence:
        return text
    return "".join(line for line in text.splitlines(keepends=True) if CONFIDENCE_FIELD not in line)


def render_prompt(request, include_confidence: bool = True) -> str:
    """Fill the template in a single pass; substituted text is never re-expanded."""
    values = {name: getattr(request, name) for name in _VARIABLES}
    return _PLACEHOLDER.sub(lambda m: values[m.group(1)], _template(include_confidence))


class ParseError(ValueError):
    kind = "parse_error"


class NoJsonObject(ParseError):
    kind = "no_json_object"


class MissingField(ParseError):
    kind = "missing_field"


class InvalidIsSatisfied(ParseError):
    kind = "invalid_is_satisfied"


class MissingConfidence(ParseError):
    kind = "missing_confidence"


class InvalidConfidence(ParseError):
    kind = "invalid_confidence"


@dataclass(frozen=True)
class ParsedVerdict:
    reasoning: str
    is_satisfied: bool
    confidence: int | None = None
    warnings: tuple[str, ...] = field(default=())


def _first_object(raw: str) -> tuple[dict, bool]:
    """First JSON object in ``raw`` and whether the text held anything else."""
    decoder = json.JSONDecoder()
    for m in re.finditer(r"\{", raw):
        try:
            obj, end = decoder.raw_decode(raw, m.start())
        except json.JSONDecodeError:
            continue
        if isinstance(obj, dict):
            clean = not raw[: m.start()].strip() and not raw[end:].strip()
            return obj, clean
    raise NoJsonObject("no JSON object found in response")


def _as_bool(value: Any) -> bool:
    if isinstance(value, bool):
        return value
    if isinstance(value, str) and value.strip().lower() in ("true", "false"):
        return value.strip().lower() == "true"
    raise InvalidIsSatisfied(f"2_IsSatisfied must be a boolean, got {value!r}")


def _as_confidence(value: Any) -> tuple[int, list[str]]:
    if isinstance(value, bool):
        raise InvalidConfidence(f"3_Confidence must be an integer, got {value!r}")
    if isinstance(value, str):
        try:
            value = float(value.strip())
        except ValueError:
            raise InvalidConfidence(f"3_Confidence must be an integer, got {value!r}") from None
    if not isinstance(value, (int, float)) or not math.isfinite(value) or value != int(value):
        raise InvalidConfidence(f"3_Confidence must be integer-valued, got {value!r}")
    value = int(value)
    if 0 <= value <= 100:
        return value, []
    return min(100, max(0, value)), [f"confidence {value} clamped to [0, 100]"]


def parse_verdict(raw: str, role: Literal["small", "large"] = "small") -> ParsedVerdict:
    obj, clean = _first_object(raw)
    warnings = [] if clean else ["non-clean response: text around the JSON object"]
    for key in ("1_Reasoning", "2_IsSatisfied"):
        if key not in obj:
            raise MissingField(f"{key} missing")
    reasoning = obj["1_Reasoning"]
    if not isinstance(reasoning, str):
        raise MissingField("1_Reasoning must be a string")
    satisfied = _as_bool(obj["2_IsSatisfied"])
    confidence = None
    if role == "small":
        if obj.get(CONFIDENCE_FIELD) is None:
            raise MissingConfidence(f"{CONFIDENCE_FIELD} missing")
        confidence, extra = _as_confidence(obj[CONFIDENCE_FIELD])
        warnings.extend(extra)
    return ParsedVerdict(reasoning, satisfied, confidence, tuple(warnings))
