"""Cost-aware evolutionary prompt optimization with racing-based survival selection."""

from .core import (
    Block,
    CapoConfig,
    ConfigError,
    DatasetSplits,
    FewShotExample,
    Instruction,
    LabeledInstance,
    Prompt,
    PromptIds,
    RngStreams,
    make_blocks,
    seeded_rng,
)
from .llm import (
    ROLE_EVAL,
    ROLE_META,
    BackendSpec,
    BackendError,
    BudgetMeter,
    ChatRequest,
    ChatResponse,
    MockRule,
    ProtocolError,
    complete,
    count_tokens,
    mock_program,
)
from .objective import (
    LengthNormalizer,
    ScoreVector,
    assemble_eval_prompt,
    evaluate_block,
    extract_answer,
    render_prompt_text,
    rel_token_length,
    score,
    shot_is_consistent,
)
from .operators import create_shots, crossover, extract_prompt, init_population, mutate
from .racing import (
    EvalLedger,
    critical_value,
    do_racing,
    paired_t_statistic,
    racing_elimination,
    student_t_cdf,
    student_t_quantile,
)
from .runner import (
    RunRecord,
    evaluate_holdout,
    report,
    run,
    select_best,
)

__version__ = "0.1.0"

__all__ = [
    "BackendSpec",
    "BackendError",
    "Block",
    "BudgetMeter",
    "CapoConfig",
    "ChatRequest",
    "ChatResponse",
    "ConfigError",
    "DatasetSplits",
    "EvalLedger",
    "FewShotExample",
    "Instruction",
    "LabeledInstance",
    "LengthNormalizer",
    "MockRule",
    "Prompt",
    "PromptIds",
    "ProtocolError",
    "ROLE_EVAL",
    "ROLE_META",
    "RngStreams",
    "RunRecord",
    "ScoreVector",
    "assemble_eval_prompt",
    "complete",
    "count_tokens",
    "create_shots",
    "critical_value",
    "crossover",
    "do_racing",
    "evaluate_block",
    "evaluate_holdout",
    "extract_answer",
    "extract_prompt",
    "init_population",
    "make_blocks",
    "mock_program",
    "mutate",
    "paired_t_statistic",
    "racing_elimination",
    "rel_token_length",
    "render_prompt_text",
    "report",
    "run",
    "score",
    "seeded_rng",
    "select_best",
    "shot_is_consistent",
    "student_t_cdf",
    "student_t_quantile",
    "__version__",
]
