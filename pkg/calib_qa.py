import time
import numpy as np
from cream.model import ModelConfig, init_params
from cream.numcore import AdamState
from cream.synthgen import GenConfig, generate_kv_doc
from cream.training import CurriculumPhase, TrainState, rng_for, run_curriculum
from cream.evalx import evaluate

cfg = ModelConfig.toy()

def make_docs(count, seed0):
    docs = []
    for i in range(count):
        d = generate_kv_doc(GenConfig(seed=seed0 + i), np.random.default_rng(seed0 + i))
        d.doc_id = f"doc_{seed0 + i}"
        docs.append(d)
    return docs

train_docs = make_docs(2000, 0)
held = make_docs(40, 10_000)
datasets = {t: train_docs for t in ("TR", "MTP", "CAPT", "QA", "QG")}
state = TrainState(params=init_params(cfg, rng_for(0, "init")), adam=AdamState(lr=1e-3), seed=0)

t0 = time.time()
for stage in range(8):
    phases = [CurriculumPhase("qa", 200, 16, 1e-3, "fixed", {"QA": 1.0})]
    state.step = 0
    run_curriculum(phases, datasets, state, cfg, log_interval=1000, noise_drop_max=0.3)
    rep = evaluate(state.params, cfg, held, seed=0)
    print(f"stage {stage}: em={rep.em:.3f} anls={rep.mean_anls:.3f} ema={state.ema_lm:.3f} "
          f"elapsed={time.time() - t0:.0f}s", flush=True)
    for s in rep.samples[:5]:
        print("   q:", s.question, "| gold:", s.golds[0], "| pred:", repr(s.prediction), flush=True)
