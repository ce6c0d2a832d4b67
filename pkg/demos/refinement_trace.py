"""Mean silhouette IoU per refinement iteration over a handful of scenes,
for the quadratic-model and coordinate-search optimisers."""
import numpy as np

from roomscene.errors import PlacementRejection
from roomscene.pipeline import Config, run_pipeline
from roomscene.synth import make_scene


def traces(method, n_scenes=5, iters=40):
    out, s = [], 0
    while len(out) < n_scenes:
        try:
            _, bundle = make_scene(s, 10)
        except PlacementRejection:
            s += 1
            continue
        res = run_pipeline(bundle, Config(iters=iters, method=method))
        out.append(res.metrics["mean_trace"])
        s += 1
    return np.mean(out, axis=0)


if __name__ == "__main__":
    q, c = traces("quadratic"), traces("coordinate")
    print("iter  quadratic  coordinate")
    for k in range(0, len(q), 5):
        print("%4d  %9.4f  %10.4f" % (k, q[k], c[k]))
