"""
PD as a quality score
=====================

The averaged pixel distance (PD) of an image is the mean of its error
map. Ranking a generated set by PD and splitting it into tiers gives
tiers whose Fréchet distance to real images falls from the worst tier to
the best. Run ``02_train_detector.py`` first.
"""

import numpy as np

from pixelcritic import reference as ref
from pixelcritic.metrics import PDScore, evaluate_splits, rank_and_split, split_spearman
from pixelcritic.net import load_model, predict
from pixelcritic.toyworld import toy_images

model = load_model("demo_out/detector/model.pxc")

# Same layouts at every corruption level, so only the damage differs
for c in (0.0, 0.25, 0.5, 0.75, 1.0):
    images = np.stack([im for im, _, _ in toy_images(100, "generated", ref.CLASSES, corruption=c, seed=500)])
    print(f"c={c:.2f}  mean PD {predict(model, images).mean():.4f}")

# A graded set with c drawn uniformly, embedded by an encoder trained on real images
encoder = ref.train_reference_encoder()
images, classes, corruption = ref.graded_generated()
pd = predict(model, images).mean(axis=(1, 2))
print("correlation of PD with c:", round(float(np.corrcoef(pd, corruption)[0, 1]), 3))

scores = [PDScore(float(p), i, str(c)) for i, (p, c) in enumerate(zip(pd, classes))]
gen_features = dict(enumerate(encoder(images)))
real_features = encoder(ref.reference_real())
for k in (4, 32):
    report = evaluate_splits(rank_and_split(scores, k, per_class=True), gen_features, real_features)
    if k == 4:
        print(report.table())
    print(f"k={k}: Spearman(split, distance) = {split_spearman(report):.3f}")
