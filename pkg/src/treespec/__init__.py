"""Tree speculative decoding at desk scale: a deterministic toy
transformer, branchable KV caches, tensorized speculation trees with
ancestor-only attention masks, a two-mode verification engine, and a
benchmark harness."""

__version__ = "0.1.0"

from .errors import (
    CacheFormatError,
    CommitError,
    ConfigurationError,
    MaskShapeError,
    MaskValidityError,
    TokenRangeError,
    TreespecError,
    TreeStructureError,
)
from .numerics import dtype_for, tolerance_for
from .cache import (
    BranchCache,
    CommittedCache,
    commit_by_length,
    commit_by_path_indices,
    export_layers,
    import_layers,
    replicate,
)
from .model import (
    Model,
    ModelConfig,
    forward_masked_batch,
    forward_step,
    init_model,
    model_tolerance,
    prefill,
)
from .tree import (
    AncestorTable,
    SpecTree,
    accepted_path_indices,
    build_ancestor_table,
    linearize,
    pad_batch,
    validate_tree,
)
from .mask import TreeMask, brute_force_mask, build_tree_mask
from .drafter import DraftConfig, SubsetMap, build_vocab_subset, propose_tree, truncate_context
from .trace import IterationRecord, TurnTrace
from .engine import (
    DecodeConfig,
    accept_greedy,
    generate_baseline,
    generate_speculative,
    verify_tree_batched,
    verify_tree_reference,
)
from .stats import SummaryStats, nearest_rank, read_traces, stage_breakdown, summarize
from .harness import (
    DEFAULT_TEACHER,
    Prompt,
    RunConfig,
    default_drafter_config,
    gen_prompts,
    run,
    shard,
    sweep,
)

__all__ = [
    "__version__",
    "TreespecError",
    "ConfigurationError",
    "TokenRangeError",
    "MaskShapeError",
    "MaskValidityError",
    "CacheFormatError",
    "CommitError",
    "TreeStructureError",
    "dtype_for",
    "tolerance_for",
    "CommittedCache",
    "BranchCache",
    "replicate",
    "commit_by_length",
    "commit_by_path_indices",
    "export_layers",
    "import_layers",
    "ModelConfig",
    "Model",
    "init_model",
    "model_tolerance",
    "prefill",
    "forward_step",
    "forward_masked_batch",
    "SpecTree",
    "AncestorTable",
    "linearize",
    "build_ancestor_table",
    "validate_tree",
    "accepted_path_indices",
    "pad_batch",
    "TreeMask",
    "build_tree_mask",
    "brute_force_mask",
    "DraftConfig",
    "SubsetMap",
    "build_vocab_subset",
    "truncate_context",
    "propose_tree",
    "TurnTrace",
    "IterationRecord",
    "DecodeConfig",
    "generate_baseline",
    "generate_speculative",
    "verify_tree_batched",
    "verify_tree_reference",
    "accept_greedy",
    "nearest_rank",
    "SummaryStats",
    "read_traces",
    "summarize",
    "stage_breakdown",
    "DEFAULT_TEACHER",
    "default_drafter_config",
    "Prompt",
    "gen_prompts",
    "shard",
    "RunConfig",
    "run",
    "sweep",
]
