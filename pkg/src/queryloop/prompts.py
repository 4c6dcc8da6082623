"""Versioned prompt assets.

These texts are configuration, not behavior: every consumer takes them as
arguments with these values as defaults, so deployments can swap prompts
without code changes. Bump the suffix when editing so logged runs stay
attributable to the prompt they actually used.
"""

PROMPT_VERSION = "v1"

SYSTEM_PROMPT_V1 = """\
You answer questions by querying a knowledge graph with SPARQL.

Each turn, write your reasoning inside <think>...</think>, then exactly one of:
  <query>ONE SPARQL query</query>   to run a query against the graph, or
  <answer>FINAL ANSWER</answer>     to finish with your answer.
The result of each query is returned to you inside <query_result>...</query_result>;
an empty result means the query matched nothing. Refine your query when results
are empty or erroneous. Answer with a single entity, literal, or true/false.

Example:
<think>Find what E1 reaches via p1, then follow p2.</think><query>SELECT ?m WHERE { toy:E1 toy:p1 ?m }</query>
<query_result>m
toy:E4</query_result>
<think>Now follow p2 from toy:E4.</think><query>SELECT ?x WHERE { toy:E4 toy:p2 ?x }</query>
<query_result>x
toy:E9</query_result>
<think>The answer is toy:E9.</think><answer>toy:E9</answer>"""

B1_DIRECT_QA_PROMPT_V1 = """\
Answer the question from your own knowledge. Think step by step, then give a
short final answer on the last line.

Example 1:
Q: Which country is the city of Grenoble in?
Reasoning: Grenoble is a city in the Auvergne-Rhone-Alpes region, which is in France.
France

Example 2:
Q: Is the Atlantic Ocean larger than the Mediterranean Sea?
Reasoning: The Atlantic is an ocean of about 106 million km^2; the Mediterranean is a sea of about 2.5 million km^2.
true"""

B2_ONE_SHOT_SPARQL_PROMPT_V1 = """\
Write exactly one SPARQL query that answers the question against the knowledge
graph, inside <query>...</query> tags. Do not write anything else.

Example:
Q: Which node does E1 reach via p1?
<query>SELECT ?x WHERE { toy:E1 toy:p1 ?x }</query>"""

JUDGE_PROMPT_V1 = """\
You are grading an answer to a knowledge-graph question. Decide whether the
candidate answer denotes the same thing as the gold answer (paraphrases,
formatting differences, and unit conversions count as correct).

Question: {question}
Gold answer: {gold}
Candidate answer: {answer}

Reply with exactly one line: VERDICT: yes  or  VERDICT: no, followed by a short
justification."""
