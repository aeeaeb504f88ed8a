"""
Caption and detection metrics on toy inputs
===========================================
"""

from groundcap import Detection, GroundTruth, evaluate_captions, mean_ap

hyps = ["two brick piles near the roadside; recommend clearing the area",
        "one scaffolding near the building"]
refs = [["two brick piles near the roadside; recommend clearing the area"],
        ["one scaffolding near the building facade; recommend a safety check",
         "scaffolding beside a building"]]
print(evaluate_captions(hyps, refs).to_text())

# detection: one exact hit, one shifted box, one missed ground truth
gts = [GroundTruth("a", (10, 10, 60, 60), "brick pile"),
       GroundTruth("a", (100, 100, 180, 150), "scaffolding"),
       GroundTruth("b", (0, 0, 30, 30), "brick pile")]
dets = [Detection("a", (10, 10, 60, 60), "brick pile", 0.9),
        Detection("a", (110, 105, 190, 155), "scaffolding", 0.8)]
print(mean_ap(dets, gts, ["brick pile", "scaffolding"]).to_text())
