"""Prompt templates for every oracle call.

Layouts follow the published CDT prompts; section headers double as anchors that
the offline mock provider uses to find fields, so keep them stable.
"""
from __future__ import annotations

import json

GUIDE_SUFFIXES = (
    "Thus, {group} will",
    "Thus, {group} prioritizes",
    "As a result, {group} faces",
    "This changes {group}'s",
)

REPROMPT_NOTE = (
    "\n\nYour previous reply could not be parsed. Reply again, following the "
    "requested output format exactly."
)


def one_line(text: str) -> str:
    return " ".join(text.split())


def verbalize_pairs(observations) -> str:
    return "\n".join(
        f"- Scene: {one_line(o.context)}\n  Action: {one_line(o.decision)}" for o in observations
    )


def _bullets(lines, empty="(none)") -> str:
    lines = list(lines)
    return "\n".join(f"- {x}" for x in lines) if lines else empty


def hypothesis_generation(group, observations, established, gate_path, k, topic="") -> str:
    topic = topic or "general behavior"
    return f"""# Scene-Action Pairs
{verbalize_pairs(observations)}

# Established Statements
{_bullets(established)}

# Already Proposed Common Points
{_bullets(gate_path)}

# Task
Your task is to build the grounding logic for an AI system to understand the behavior of {group} (Current topic: "{topic}"), assert the AI system has no prior knowledge of {group}.
To do this, please propose hypotheses for the general behavior logic of {group} based on the given action-scene pairs, complete the task step by step:
1. What's the main feature of {group}'s behavior (Focus on the current topic: "{topic}") shown in the given scene-action pairs, other than the already established statements?
2. Summarize {k} potential common points (grounding statements) of the actions taken by {group} in the given scenes about the focused topic: "{topic}", which is other than the already established statements.
- The grounding statements should be general, avoiding too specific action descriptions.
- The grounding statements should be concise, informative, and general sentences.
- Never be assertive! Always make objective description of the character rather than making assertive causal relations.
- Keep each statement decision-relevant: it should explain *why this subset of actions* happens, not just a broad institutional slogan.
3. Summarize {k} potential common points of the given scenes that trigger each behavior, which should be different from already proposed common points.
- The question should be simple, not ambiguous, and specific to a subset of scenes rather than always applicable.
- Focus on the next action when asking! Don't ask whether certain event is involved, instead ask whether the scene might trigger potential behavior for {group}'s next action.
- Directly include "{group}'s next action" in the question!
- Make each question selective (rough target 20%-70% scene coverage), avoid near-universal questions.
4. Output the hypothesized scene-action triggers in the following format:
action_hypotheses = []  # A list of grounding statements (strings)
scene_check_hypotheses = []  # A list of syntactically complete questions to check the given scene (always mentioning {group})"""


def hypothesis_summarization(group, pairs, n_target, n_upper) -> str:
    payload = json.dumps(
        [{"scene_check_hypothesis": p.gate_hypothesis, "action_hypothesis": p.statement_hypothesis}
         for p in pairs],
        indent=1, ensure_ascii=False,
    )
    return f"""# Task: Summarize & Compress Scene-Action Hypothesis Pairs
You are given a list of {len(pairs)} paired hypotheses. Each pair contains:
- "scene_check_hypothesis": a question about {group}'s next action
- "action_hypothesis": a general behavioral grounding statement about {group}

Input pairs:
{payload}

## Goal
Produce a rewritten, deduplicated, and compressed set of pairs that capture the most important and most general behavioral grounding logic for {group}.
You should output between {n_target} and {n_upper} pairs. Keep as many meaningfully distinct pairs as needed, but merge or drop redundant ones.

## Output Format (JSON only)
{{"pairs": [{{"scene_check_hypothesis": "...", "action_hypothesis": "..."}}]}}"""


def ungated_validation(group, decision, statement) -> str:
    return f"""Group: {group}

Action: {decision}

Statement: {statement}

Question: Is the action consistent with the behavioral pattern described in the statement?
yes: the action follows or reflects the pattern described in the statement.
no: the action is unrelated to or contradicts the pattern described in the statement.
Directly answer only yes/no."""


def gate_check(scene, question) -> str:
    return f"""Scene: {scene}

Question: {question}

Answer yes or no based on available evidence. Answer unknown only when the scene is completely unrelated to the question."""


def candidate_selection(group, verbalized_candidates) -> str:
    blocks = "\n\n".join(f"## Candidate {i}\n{text}" for i, text in enumerate(verbalized_candidates, 1))
    return f"""I have generated {len(verbalized_candidates)} candidate Codified Decision Trees (CDTs) intended to model the behavior of the group "{group}".
Please evaluate them and select the best one based on:
1. Coherence and logic of the decision flow.
2. Generalized understanding of the group's behavior (avoiding overfitting to specific trivial details).
3. Clarity and meaningfulness of the gates (questions) and statements (behaviors).

Here are the candidates:

{blocks}

Task:
1. Analyze the strengths and weaknesses of each candidate briefly.
2. Select the single best candidate.
3. Output your choice in the following JSON format:
{{"best_candidate_index": <1-based index>, "reasoning": "<your reasoning>"}}"""


def relation_batch(group, decision, statements) -> str:
    listing = "\n".join(f"[{i}] {one_line(s)}" for i, s in enumerate(statements, 1))
    return f"""Group: {group}

Action: {decision}

Classify the relationship between the action and EACH statement below.
For each statement, answer:
- supports: the action follows, reflects, or is consistent with the pattern.
- irrelevant: the action is unrelated to the statement.
- contradicts: the action conflicts with the pattern.

Statements:
{listing}

Output JSON only:
["supports or irrelevant or contradicts", ...]
Return a JSON array with exactly one label per statement, in the same order."""


def demotion_gates(group, statement, precision, sup_events, con_events) -> str:
    return f"""You are analyzing behavioral patterns of {group}.

## Statement being demoted
"{statement}"

This statement has precision {precision:.2f} at the current node; it holds for some events but not others. We need to find a scene condition that separates the supporting events from the contradicting events, so the statement can be moved to a more specific subtree.

## Supporting events (action consistent with the statement):
{verbalize_pairs(sup_events) or "(none)"}

## Contradicting events (action conflicts with the statement):
{verbalize_pairs(con_events) or "(none)"}

## Task
Generate 3 candidate yes/no gate questions about the scene context that would separate the supporting events from the contradicting/irrelevant ones. Each question should:
- Be about observable scene conditions (not about the action itself)
- Be specific enough to distinguish this subset of events
- Always mention "{group}" or reference their situation
- Be answerable with yes/no from the scene context alone
- Each candidate should take a different angle

Output as JSON: ["question 1", "question 2", "question 3"]"""


def gate_semantic_check(group, statement, question) -> str:
    return f"""You are analyzing behavioral patterns of {group}.

## Statement
"{statement}"

## Gate question
"{question}"

## Task
Does this gate question provide a meaningful scene condition under which the statement would be specifically relevant? In other words, is the statement a natural behavioral pattern to expect when the gate condition is true?

Answer only: yes or no."""


def add_statements(group, path_text, uncovered, existing) -> str:
    return f"""You are analyzing behavioral patterns of {group}.

## CDT path from Root to this node:
{path_text or "(root)"}

## Uncovered events at this node:
These events are not supported by any existing statement at this node.
{verbalize_pairs(uncovered)}

## Existing statements at this node (for reference, do not duplicate):
{_bullets(existing)}

## Task
Generate new behavioral statements that capture the patterns in the uncovered events.
- Each statement should be one sentence, specific to the topic indicated by the gate path.
- Do NOT duplicate or rephrase existing statements.
- Focus on the behavioral pattern, not specific actions.

Output as JSON: {{"statements": ["statement 1", "statement 2"]}}"""


_PREDICT_TAIL = ("Predict the specific action taken by {group}. State the concrete decision, "
                 "not the motivation or background. Answer in one sentence.")


def cdt_inference(group, background, context, question) -> str:
    return f"""# Background Knowledge
{background}

# Context
{context}

# Question
{question}

{_PREDICT_TAIL.format(group=group)}"""


def vanilla_inference(group, context, question) -> str:
    return f"""# Context
{context}

# Question
{question}

{_PREDICT_TAIL.format(group=group)}"""


def human_profile_inference(background, context, question) -> str:
    return f"""# Background Knowledge
{background}

# Scene
{context}

# Question
{question} Answer a concise narration in one sentence."""


def profile_extraction(group, observations) -> str:
    return f"""# Task
Please provide a 1000-word, narrative-style character profile for {group}.
The profile should read like a cohesive introduction, weaving together the character's background, personality traits and core motivations, notable attributes, relationships, key experiences, major decisions or actions, and character arc or development.
The profile should be based on either your existing knowledge of the character or the provided information, without fabricating or inferring any inaccurate or uncertain details.

# Scene-Action Pairs
{verbalize_pairs(observations)}

Now, based on the given scene-action pairs, please generate the character profile, starting with ===Profile===."""


def profile_aggregation(main_profile, new_profile) -> str:
    return f"""# Main Profile
{main_profile}

# New Summarized Profile (From New Episodes)
{new_profile}

Directly update the main profile based on the new summarized profile, keep its length in around 1000 words."""


def rag_inference(group, examples, context, question) -> str:
    return f"""# In-Context Examples
The following are past scene-action pairs for {group}:
{verbalize_pairs(examples)}

# Context
{context}

# Question
{question}

{_PREDICT_TAIL.format(group=group)}"""


def consistency_judge(context, reference, prediction) -> str:
    return f"""Context: {context}

Premise: {reference}
Hypothesis: {prediction}

Determine the relationship between the premise and hypothesis.
- "entails": The hypothesis can be inferred from the premise. They describe the same action or event.
- "neutral": The hypothesis is neither supported nor contradicted by the premise.
- "contradicts": The hypothesis is incompatible with the premise.
Answer with one word: entails, neutral or contradicts."""


DIMENSION_RUBRICS = {
    "initiative": (
        "Initiative - Whether both actions are driven by the same type of trigger.\n"
        "  Proactive: the entity initiates a new move on its own accord.\n"
        "  Reactive: the entity responds to external events or pressures.\n"
        "  Match if both share the same trigger type; mismatch otherwise."
    ),
    "scope": (
        "Scope - Whether both actions are directed at the same domain.\n"
        "  Internal: directed inward (restructuring, reform, resource reallocation).\n"
        "  External: directed outward (market expansion, product launch, partnership).\n"
        "  Match if both target the same domain; mismatch otherwise."
    ),
    "magnitude": (
        "Magnitude - Whether both actions represent a similar scale of change.\n"
        "  Incremental: minor adjustment or refinement.\n"
        "  Moderate: notable but bounded change.\n"
        "  Transformative: fundamental strategic shift.\n"
        "  Match if both are at the same or adjacent levels; mismatch if non-adjacent."
    ),
    "horizon": (
        "Horizon - Whether both actions operate on the same time horizon.\n"
        "  Exploitative: short-term optimization, immediate response.\n"
        "  Explorative: long-term investment, building new capabilities.\n"
        "  Match if both serve the same timeframe; mismatch otherwise.\n"
        "  Note: forward-looking language does not make an action explorative; judge by what it actually accomplishes."
    ),
}


def dimension_judge(dim, group, context, reference, prediction) -> str:
    return f"""# Context
{context}

# Your Response: {prediction}
# Ground Truth: {reference}

Compare the action of {group} in the response against the ground truth. Focus on whether the strategic character of the actions aligns, not whether the specific actions are identical.

{DIMENSION_RUBRICS[dim]}

Output: {{"{dim}": "match" | "mismatch", "reason": "..."}}"""
