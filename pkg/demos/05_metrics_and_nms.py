"""Scoring detections by hand: greedy matching, 11-point AP, harmonic mean,
and what class-wise NMS keeps."""
import numpy as np

from zsdet.evaluation import GroundTruth, average_precision_11pt, build_report, harmonic_mean
from zsdet.geometry import nms, pairwise_iou
from zsdet.inference import Detection
from zsdet.semantics import ClassVocabulary

# two objects, three detections: hit, miss, hit
print("AP of [TP, FP, TP] with 2 objects:", round(average_precision_11pt([True, False, True], [0.9, 0.8, 0.7], 2), 4))
print("HM(63.2, 46.5) =", round(harmonic_mean(63.2, 46.5), 2))

vocab = ClassVocabulary.build(["person"], ["dog"])
gts = {"img": GroundTruth(np.array([[10, 10, 8, 8], [30, 30, 6, 6]], float), np.array([1, 2]))}
dets = {"img": [Detection((10, 10, 8, 8), 1, 0.9, "gzsd", "img"),
                Detection((11, 10, 8, 8), 1, 0.6, "gzsd", "img"),     # duplicate: FP, but ranked after the hit
                Detection((30.5, 30, 6, 6), 2, 0.5, "gzsd", "img")]}
rep = build_report(dets, gts, vocab, (0.5, 0.75), "gzsd")
for thr, per_class in rep.ap.items():
    print(f"AP@{thr}:", {k: round(float(v), 3) for k, v in per_class.items()})
print("HM by threshold:", rep.harmonic_mean, "(a duplicate ranked below its hit costs no AP)")

boxes = np.array([[0, 0, 10, 10], [1, 0, 10, 10], [20, 20, 5, 5], [0.5, 0.5, 10, 10]], float)
keep = nms(boxes, np.array([0.9, 0.8, 0.7, 0.95]), 0.5)
print("NMS keeps", keep.tolist(), "with pairwise IoU\n", np.round(pairwise_iou(boxes[keep], boxes[keep]), 3))
