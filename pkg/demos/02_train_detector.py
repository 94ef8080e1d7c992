"""
Training the reference detector
===============================

A 4-stage U-Net with self-attention learns to predict, per pixel, the
probability that the pixel came from the generated image. This is the
same seeded run the acceptance suite uses; it takes about five minutes on
one CPU core and writes ``demo_out/detector/model.pxc``.
"""

from pathlib import Path

from pixelcritic import reference as ref
from pixelcritic.heatmap import write_heatmap
from pixelcritic.net import predict
from pixelcritic.training import evaluate_detection

out = Path("demo_out/detector")
model, history = ref.train_detector(out_dir=out)
for h in history[::5] + history[-1:]:
    print(f"epoch {h['epoch']:2d}  mean loss {h['mean_loss']:10.2f}")

# Pixel AUC on collages the model has not seen
heldout = ref.heldout_collages()
report = evaluate_detection(model, heldout, threshold=0.5)
print(f"held-out AUC {report.auc:.3f}, precision {report.precision:.3f}, recall {report.recall:.3f}")

# Error maps as overlays: blue where the model sees real pixels, red where it sees generated ones
maps = predict(model, [s.image for s in heldout[:4]])
for i, (s, p) in enumerate(zip(heldout, maps)):
    write_heatmap(out / f"heatmap_{i}.png", s.image, p, alpha=0.5)
