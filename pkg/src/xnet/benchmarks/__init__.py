from xnet.benchmarks.nguyen import (  # noqa
    BenchmarkTask,
    get_task,
    nguyen_suite,
    sample_task,
)
from xnet.benchmarks.tables import (  # noqa
    BenchConfig,
    evaluate_extrapolation,
    run_ada_alpha_comparison,
    run_table1,
    run_table2,
    summarize,
)
