"""Quick end-to-end check of the Python bindings."""
import json
import math
import os
import tempfile

import sfada

p = [0.7, 0.2, 0.1]
lp = sfada.contrastive_log_probs(p)
assert all(abs(a - math.log(b)) < 1e-12 for a, b in zip(lp, p))

margin, best, second = sfada.bvsb_margin([0.1, 0.6, 0.3])
assert (best, second) == (1, 2) and abs(margin - 0.3) < 1e-12

assert sfada.rank_scores([0.3, 0.1, 0.2]) == [2, 0, 1]
assert sfada.budget_schedule(11, 5) == [3, 2, 2, 2, 2]
assert abs(sfada.lr_at(0.01, 0.0) - 0.01) < 1e-15

current = {0: [0.5, 0.5], 1: [0.9, 0.1], 2: [0.6, 0.4]}
scores = sfada.cas_scores(current, kappa=2)
assert [s[0] for s in scores] == [0, 1, 2]
picked = sfada.select_smallest([(s[0], s[5]) for s in scores], 1)
assert picked == [0], picked

spec = {
    "classes": 2,
    "n_source": 200,
    "n_target": 200,
    "rotation": 0.5,
    "noise_source": 0.1,
    "noise_target": 0.1,
    "class_priors_target": [0.5, 0.5],
    "translation": [0.2, 0.0],
    "seed": 3,
}
(sx, sy), (tx, ty) = sfada.gen_two_moons_shift(json.dumps(spec))
assert len(sx) == 200 and len(tx) == 200 and set(sy) == {0, 1}

model = sfada.Model(2, 2, hidden=[8], bottleneck=4, seed=1)
probs = model.probs(tx[:5])
assert all(abs(sum(r) - 1.0) < 1e-9 for r in probs)
assert len(model.features(tx[:5])[0]) == 4
mean_acc, per_class = model.evaluate(tx, ty)
assert 0.0 <= mean_acc <= 1.0 and len(per_class) == 2

with tempfile.TemporaryDirectory() as tmp:
    path = os.path.join(tmp, "m.ckpt")
    model.save(path)
    again = sfada.Model.load(path)
    assert again.probs(tx[:5]) == probs
    try:
        sfada.Model.load(os.path.join(tmp, "missing.ckpt"))
        raise AssertionError("expected IOError")
    except OSError:
        pass

    config = json.loads(sfada.default_config())
    config["dataset"] = {"two_moons": spec}
    config["budget"] = {"count": 10}
    config["rounds"] = 2
    config["adapt"]["epochs_per_round"] = 3
    config["pretrain"]["epochs"] = 5
    metrics = sfada.run_experiment(json.dumps(config), os.path.join(tmp, "out"))
    assert [m[0] for m in metrics] == [0, 1, 2]
    assert metrics[-1][3] == 10
    assert os.path.exists(os.path.join(tmp, "out", "metrics.csv"))

try:
    sfada.run_experiment('{"rounds": 0}')
    raise AssertionError("expected ValueError")
except ValueError:
    pass

print("smoke test ok, final mean_acc %.4f" % metrics[-1][1])
