from netprompt.agents.dqn import DqnAgent, DqnConfig, DqnError, ReplayBuffer, run_dqn, td_targets
from netprompt.agents.prompting import (
    DecisionParseError,
    DemonstrationSet,
    EpsilonSchedule,
    Experience,
    ExperiencePool,
    PromptBundle,
    PromptingConfig,
    RunAborted,
    parse_decision,
    render_task_prompt,
    run_iterative_prompting,
    run_random,
    select_demonstrations,
)

__all__ = [
    "DecisionParseError", "DemonstrationSet", "DqnAgent", "DqnConfig", "DqnError", "EpsilonSchedule",
    "Experience", "ExperiencePool", "PromptBundle", "PromptingConfig", "ReplayBuffer", "RunAborted",
    "parse_decision", "render_task_prompt", "run_dqn", "run_iterative_prompting", "run_random",
    "select_demonstrations", "td_targets",
]
