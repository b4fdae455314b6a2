__doc__ = """# LLCBench

*LLCBench* trains small fully connected classifiers with stochastic gradient descent (SGD) and smoothed natural
gradient descent (NGD), and measures how degenerate the solutions are: the local learning coefficient (LLC) estimated
by SGLD, the WBIC and the Hutchinson estimate of the Hessian trace.

Everything is plain `numpy`/`scipy`: gradients, Hessian-vector products and per-example gradients are computed by
hand-written backpropagation.


## Requirements

- Python version `>= 3.8`
- `numpy`, `scipy`

## Installation
Installing from source
```bash
git clone <repository-url> llcbench
python -m pip install -e llcbench
```

## Quickstart

### Training and measuring a model

```python
import llcbench

cfg = llcbench.RunConfig(
    architecture={"hidden_layers": [64]},
    optimizer={"kind": "ngd", "learning_rate": 1e-2, "alpha": 1e-2},
    dataset={"source": "synthetic", "split": {"downsample_side": None}},
    epochs=5,
    hutchinson={"num_samples": 100},
    sgld={"num_chains": 2, "draws_per_chain": 300, "burn_in": 50},
)
records = llcbench.run_training(cfg, "runs/ngd")
print(records[-1].lambda_hat, records[-1].hessian_trace)
```

`run_training` writes `metrics.csv`, `manifest.json`, the final checkpoint and one checkpoint per metric epoch.

### Benchmark data

The `mnist` and `fashion_mnist` sources read the standard IDX training files (plain or gzipped) from
`<data_dir>/mnist/` and `<data_dir>/fashion_mnist/`. The data directory is taken from the config field
`dataset.data_dir` or from the environment variable `LLCBENCH_DATA_DIR` (which may also be placed in a `.env` file at
the project root). Downloading the files is a manual step.

### Single measurements

```python
import llcbench

model = llcbench.MlpModel.initialize({"input_dim": 16, "hidden_layers": [8], "output_classes": 4}, seed=0)
data = llcbench.synthetic_classification(200, 16, 4, seed=0)
estimate = llcbench.estimate_llc(model, data, {"num_chains": 2, "draws_per_chain": 500, "burn_in": 100})
trace = llcbench.hutchinson_trace(model, data.as_batch(), {"num_samples": 1000})
```

### Command line

```bash
python -m llcbench train --config run.json --out-dir runs/sgd -v
python -m llcbench compare --config run.json --seeds 0,1,2,3,4 --out-dir runs/compare
python -m llcbench sweep --config run.json --alphas 1e-3,1e-2,1e-1,1,10 --seeds 0,1,2
python -m llcbench fork --config fork.json --out-dir runs/fork
python -m llcbench llc --config run.json --checkpoint runs/sgd/checkpoint_final.npy
```

Exit codes: `0` on success, `2` on configuration or input errors, `3` on numeric or solver failures.
"""
from . import exceptions
from . import utils
from .data import (
    Dataset,
    DatasetSpec,
    SplitSpec,
    batches,
    downsample,
    load_datasets,
    load_idx,
    split,
    subsample,
    synthetic_classification,
    write_idx
)
from .experiment import (
    CadenceSpec,
    ForkSpec,
    RunConfig,
    Trainer,
    experiment_compare,
    experiment_fork,
    experiment_overfit,
    experiment_smoothing_sweep,
    run_training
)
from .export import MetricsRecord, export, read_csv
from .hessian import HutchinsonConfig, TraceEstimate, exact_hessian_trace, hutchinson_trace
from .nn import Batch, MlpArchitecture, MlpModel
from .optimizers import NgdConfig, SgdConfig, ngd_step, sgd_step
from .slt import (
    BUNDLED_POTENTIALS,
    LlcEstimate,
    SgldConfig,
    compute_bic,
    estimate_llc,
    estimate_wbic,
    sgld_sample,
    volume_scaling_oracle
)
