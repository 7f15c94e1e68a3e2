#!/usr/bin/env python3
# Copyright 2026 The K2S Toolkit Authors. All Rights Reserved.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     https://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Regenerates the shipped data assets and the synthetic CI fixtures.

Fixture boxes sit on a 30 px grid. Every image extent is 2000, 2500 or 3000
px, so each coordinate is an exact loc-token value and quantization
round-trips without loss. Rater boxes are the target box offset by
symmetric integer deltas, so their unweighted corner mean is the target.
Boxes keep a border margin larger than their own diagonal, which lets a
half-diagonal shift land inside the image.

Usage: tools/make_fixtures.py [DATA_DIR]   (default: ./data)
"""

import csv
import json
import random
import sys
from pathlib import Path

SHAPE = ["round", "oval", "circular", "spherical", "elliptical", "triangular",
         "rectangular", "linear", "curved", "straight", "irregular", "lobulated",
         "spiculated", "nodular", "stellate", "mass-like", "lump-like", "reticular",
         "honeycomb", "septal", "branching", "wedge-shaped", "crescentic", "patchy",
         "diffuse", "borders", "contour", "outline", "edge", "pattern", "irregularity"]
DENSITY = ["dense", "solid", "soft-tissue", "fluid", "liquid", "gas", "air-filled",
           "air-containing", "fat-density", "calcified", "calcific", "ossified",
           "consolidated", "radiopaque", "radiolucent", "sclerotic", "fibrotic", "thick",
           "thin", "firm", "density"]
INTENSITY = ["bright", "white", "hyperdense", "hyperintense", "high-signal", "dark",
             "black", "hypodense", "hypointense", "low-signal", "gray", "greyish", "hazy",
             "faint", "subtle", "opaque", "lucent", "transparent", "prominent", "clear",
             "ground-glass", "increased", "decreased", "reduced", "diminished"]
LOCATION = ["within the lung", "pleural cavity", "pleural space", "pulmonary artery",
            "lung tissue", "lung fields", "in the lung", "supradiaphragmatic",
            "intrathoracic", "extrathoracic", "paramediastinal", "paravertebral",
            "mediastinum", "mediastinal", "costophrenic", "retrocardiac", "peripheral",
            "perihilar", "subpleural", "unilateral", "bilateral", "central", "aorta",
            "heart", "basal", "posterior", "anterior", "ventral", "dorsal", "apical",
            "middle", "lower", "upper", "medial", "lateral", "right", "left"]

# (class, clinical definition, source, selected description)
VINDR = [
    ("Aortic Enlargement",
     "Abnormal widening or dilatation of the aorta, seen as an enlarged aortic contour on the chest radiograph.",
     "VinDr-CXR label description",
     "Widening of the aorta visible as an enlarged artery on imaging."),
    ("Atelectasis",
     "Incomplete expansion or collapse of part or all of a lung, with volume loss and displacement of fissures or adjacent structures.",
     "VinDr-CXR label description; Radiopaedia",
     "Collapsed lung tissue causing darkened or shrunken areas in the lung."),
    ("Cardiomegaly",
     "Enlargement of the cardiac silhouette, conventionally a cardiothoracic ratio above 0.5 on a posteroanterior chest radiograph.",
     "VinDr-CXR label description; Radiopaedia",
     "Enlargement of the heart seen when the heart appears larger than normal."),
    ("Calcification",
     "Deposition of calcium salts in lung parenchyma, pleura, lymph nodes or vessels, appearing as high-attenuation foci.",
     "VinDr-CXR label description",
     "Calcium deposits in lung tissue visible as bright white spots."),
    ("Clavicle Fracture",
     "Discontinuity of the cortex of the clavicle, with or without displacement of the fragments.",
     "VinDr-CXR label description",
     "A break in the collarbone seen as a gap or irregularity in the bone."),
    ("Consolidation",
     "Replacement of alveolar air by fluid, cells or other material, producing a homogeneous opacity that may contain air bronchograms.",
     "VinDr-CXR label description; Fleischner glossary",
     "Lung tissue filled with fluid or cells causing dense solid areas on imaging."),
    ("Edema",
     "Abnormal accumulation of fluid in the interstitial and alveolar spaces of the lung, often bilateral and perihilar.",
     "VinDr-CXR label description",
     "Fluid accumulation in the lungs creating a hazy or clouded area."),
    ("Emphysema",
     "Permanent enlargement of air spaces distal to the terminal bronchioles with destruction of their walls, causing hyperinflation.",
     "VinDr-CXR label description; Radiopaedia",
     "Enlarged air spaces in the lungs appearing over-expanded or damaged."),
    ("Enlarged Pulmonary Artery",
     "Dilatation of the main or central pulmonary arteries beyond normal calibre, commonly associated with pulmonary hypertension.",
     "VinDr-CXR label description",
     "Widening of the pulmonary artery seen as an enlarged artery in the chest."),
    ("Interstitial Lung Disease (ILD)",
     "A heterogeneous group of disorders involving the pulmonary interstitium, producing reticular, nodular or reticulonodular opacities.",
     "VinDr-CXR label description; Radiopaedia",
     "Scarring or inflammation of the lung’s interstitial tissue creating a reticular or nodular pattern."),
    ("Infiltration",
     "An ill-defined pulmonary opacity caused by material such as fluid, cells or exudate filling the lung parenchyma.",
     "VinDr-CXR label description",
     "Accumulation of substances or cells in the lung tissue visible as increased density or nodules."),
    ("Lung Cavity",
     "A gas-filled space within a zone of pulmonary consolidation, mass or nodule, produced by expulsion of a necrotic part of the lesion.",
     "VinDr-CXR label description; Fleischner glossary",
     "Air-filled spaces within the lung often surrounded by dense tissue."),
    ("Lung Cyst",
     "A round parenchymal lucency or low-attenuating area with a well-defined interface with normal lung and a thin wall.",
     "VinDr-CXR label description; Fleischner glossary",
     "Fluid-filled spaces in the lung often round with thin walls."),
    ("Lung Opacity",
     "Any abnormal focal or generalized opacity or opacities in lung fields (including but not limited to consolidation, cavity, fibrosis, nodule, mass, calcification, interstitial thickening).",
     "VinDr-CXR label description",
     "An area of increased density in the lung fields typically appearing as a white or grayish patch."),
    ("Mediastinal Shift",
     "Displacement of the mediastinal structures toward one side of the thorax, due to volume loss or a space-occupying process.",
     "VinDr-CXR label description",
     "Displacement of central chest structures like the heart to one side."),
    ("Nodule / Mass",
     "A rounded or irregular opacity in the lung, called a nodule up to 3 cm in diameter and a mass when larger.",
     "VinDr-CXR label description; Fleischner glossary",
     "A growth or lump in the lung which may appear as a well-defined or irregular shape."),
    ("Pulmonary Fibrosis",
     "Scarring and thickening of lung tissue with architectural distortion and volume loss, seen as coarse reticular opacities.",
     "VinDr-CXR label description",
     "Scarring of the lung tissue creating a dense fibrous appearance."),
    ("Pneumothorax",
     "Presence of air in the pleural space, seen as a visceral pleural line without lung markings peripheral to it.",
     "VinDr-CXR label description; Radiopaedia",
     "Air trapped in the pleural space creating a gap or absence of lung tissue."),
    ("Pleural Thickening",
     "Thickening of the parietal or visceral pleura, focal or diffuse, sometimes calcified.",
     "VinDr-CXR label description",
     "Increased thickness of the pleura seen as a dense layer around the lung."),
    ("Pleural Effusion",
     "Abnormal collection of fluid in the pleural space, blunting the costophrenic angle and forming a meniscus.",
     "VinDr-CXR label description; Radiopaedia",
     "Excess fluid in the pleural space appearing as a shadow around the lungs."),
    ("Rib Fracture",
     "Discontinuity of one or more ribs, with or without displacement, step-off or callus formation.",
     "VinDr-CXR label description",
     "A break in one or more ribs appearing as a visible crack or displacement."),
    ("Other Lesion",
     "Any other abnormal lesion of the chest not covered by the remaining categories.",
     "VinDr-CXR label description",
     "An unusual mass or area in the lung with irregular borders or density."),
]

PADCHEST = [
    ("Pleural Thickening", "Thickening of the parietal or visceral pleura, focal or diffuse.",
     "Increased thickness of the pleura seen as a dense layer around the lung."),
    ("Atelectasis", "Incomplete expansion or collapse of part or all of a lung with volume loss.",
     "Collapsed lung tissue causing darkened or shrunken areas in the lung."),
    ("Pleural Effusion", "Abnormal collection of fluid in the pleural space.",
     "Excess fluid in the pleural space appearing as a shadow around the lungs."),
    ("Cardiomegaly", "Enlargement of the cardiac silhouette beyond a cardiothoracic ratio of 0.5.",
     "Enlargement of the heart seen when the heart appears larger than normal."),
    ("Aortic Elongation", "Lengthening and tortuosity of the thoracic aorta, usually age related.",
     "Lengthened and tortuous aorta, visible as an elongated curving structure."),
    ("Vertebral Degenerative Changes", "Degenerative disease of the spine with disc space narrowing, endplate sclerosis and osteophytes.",
     "Irregular vertebral margins with bony sclerosis and osteophytes."),
    ("Aortic Atheromatosis", "Atherosclerotic plaque in the aortic wall, frequently calcified at the aortic knob.",
     "Calcified deposits in the aortic wall appearing as bright, irregular opacities."),
    ("Nodule", "A rounded opacity in the lung measuring up to 3 cm.",
     "A growth or lump in the lung which may appear as a well-defined or irregular shape."),
    ("Alveolar Pattern", "Filling of the alveolar spaces by fluid, cells or other material, producing confluent opacities.",
     "Cloud-like, patchy opacities representing fluid or cellular accumulation in alveoli."),
    ("Hiatal Hernia", "Herniation of part of the stomach through the oesophageal hiatus into the thorax.",
     "A soft-tissue mass or air-fluid level above the diaphragm, near the midline."),
    ("Scoliosis", "Lateral curvature of the spine exceeding 10 degrees.",
     "Sideways curvature of the spine causing misalignment of vertebral bodies."),
    ("Hemidiaphragm Elevation", "Abnormally high position of one hemidiaphragm relative to the other.",
     "One side of the diaphragm appearing higher than the other, with convex shape."),
    ("Hyperinflated Lung", "Increased lung volume with flattened diaphragms and widened retrosternal space.",
     "Abnormally increased lung volume with expanded air spaces."),
    ("Interstitial Pattern", "Involvement of the pulmonary interstitium producing reticular or nodular opacities.",
     "Fine reticular or nodular opacities spread across the lung, indicating interstitial involvement."),
    ("Fracture", "Discontinuity of a bone visible on the chest radiograph.",
     "A break in the bone appearing as a radiolucent line or displacement."),
    ("Vascular Hilar Enlargement", "Enlargement of the hilar pulmonary vessels.",
     "Increased prominence of the pulmonary vessels near the lung hila."),
    ("NSG Tube", "Nasogastric tube passing through the oesophagus into the stomach.",
     "A thin radiopaque tube extending from the nasal cavity into the stomach."),
    ("Endotracheal Tube", "Airway tube placed through the glottis into the trachea.",
     "A thin or opaque line in the middle of the trachea."),
    ("Hypoexpansion", "Reduced lung volumes from poor inspiration or restrictive disease.",
     "Reduced lung inflation with increased density and narrow intercostal spaces."),
    ("Central Venous Catheter", "Catheter inserted into a large central vein, tip usually in the superior vena cava.",
     "A visible line inside large vein."),
    ("Electrical Device", "Implanted cardiac device such as a pacemaker or defibrillator with leads.",
     "A dense, well-defined metallic opacity, typically a pacemaker or defibrillator."),
    ("Bronchiectasis", "Irreversible dilatation of bronchi, often with wall thickening.",
     "Dilated bronchi with thick walls, appearing as tubular or cystic opacities."),
    ("Goiter", "Enlargement of the thyroid gland, which may extend into the thorax.",
     "A soft tissue mass in the anterior neck, sometimes displacing the trachea."),
    ("Other lesions", "Any other abnormal lesion not covered by the remaining categories.",
     "An unusual mass or area in the lung with irregular borders or density."),
]

PADCHEST_KNOWN = {
    "Pleural Thickening": "Pleural Thickening",
    "Atelectasis": "Atelectasis",
    "Pleural Effusion": "Pleural Effusion",
    "Cardiomegaly": "Cardiomegaly",
    "Nodule": "Nodule / Mass",
    "Other lesions": "Other Lesion",
}

LUNG_OPACITY_SELECTED = ("An area of increased density in the lung fields, "
                         "typically appearing as a white or grayish patch.")

PROMPT_HEAD = "Here is the medical definition of "
PROMPT_TAIL = (" Based on this definition, and focusing on shape, intensity, density, "
               "and location, provide a concise visual description that could guide "
               "image recognition.")

GRID = 30
DELTA = 6
MARGIN = 450


def fnv1a64(data: bytes, seed: int = 0xcbf29ce484222325) -> int:
    h = seed
    for c in data:
        h ^= c
        h = (h * 0x100000001b3) & 0xFFFFFFFFFFFFFFFF
    return h


def request_seed(seed: int, class_name: str, idx: int) -> int:
    inner = fnv1a64(str(idx).encode(), seed ^ 0x9E3779B97F4A7C15)
    return fnv1a64(class_name.encode(), inner)


def write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def grid_box(rng: random.Random, w: int, h: int, x_lo: int, x_hi: int, y_lo: int, y_hi: int):
    """Box on the grid with aspect <= 1.6 whose top-left lies in the window."""
    while True:
        bw = rng.randrange(4, 11) * GRID
        bh = rng.randrange(4, 11) * GRID
        if max(bw, bh) <= 1.6 * min(bw, bh):
            break
    x1 = rng.randrange(x_lo // GRID, (x_hi - bw) // GRID + 1) * GRID
    y1 = rng.randrange(y_lo // GRID, (y_hi - bh) // GRID + 1) * GRID
    return (x1, y1, x1 + bw, y1 + bh)


def case_boxes(rng: random.Random, two: bool):
    if two:
        w = h = 3000
        a = grid_box(rng, w, h, MARGIN, 1200, MARGIN, 1200)
        b = grid_box(rng, w, h, 1800, w - MARGIN, 1800, h - MARGIN)
        return w, h, [a, b]
    w = rng.choice([2000, 2500, 3000])
    h = rng.choice([2000, 2500, 3000])
    return w, h, [grid_box(rng, w, h, MARGIN, w - MARGIN, MARGIN, h - MARGIN)]


def rater_rows(rng: random.Random, box):
    n = rng.choice([1, 2, 3])
    offsets = {1: [0], 2: [-DELTA, DELTA], 3: [-DELTA, 0, DELTA]}[n]
    signs = [rng.choice([-1, 1]) for _ in range(4)]
    rows = []
    for r, o in enumerate(offsets):
        rows.append((tuple(c + s * o for c, s in zip(box, signs)), f"R{r + 1}"))
    return rows


def build_split(rng, classes, per_class, prefix, header, two_every=3):
    rows = [header]
    pairs = []
    k = 0
    for rep in range(per_class):
        for ci, cls in enumerate(classes):
            # two classes share an image
            image_id = f"{prefix}{(k // 2) + 1:04d}"
            if k % 2 == 1:
                w, h = pairs[-1][1], pairs[-1][2]
                two = w == 3000 and h == 3000 and k % two_every == 0
                if two:
                    _, _, boxes = case_boxes(rng, True)
                else:
                    boxes = [grid_box(rng, w, h, MARGIN, w - MARGIN, MARGIN, h - MARGIN)]
            else:
                w, h, boxes = case_boxes(rng, k % two_every == 0)
            pairs.append((image_id, w, h, cls, boxes))
            for box in boxes:
                for (x1, y1, x2, y2), rater in rater_rows(rng, box):
                    rows.append([image_id, cls, x1, y1, x2, y2, w, h, rater])
            k += 1
    return rows, pairs


def write_csv(path: Path, rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as f:
        csv.writer(f, lineterminator="\n").writerows(rows)


def candidates_for(cls: str, selected: str) -> list:
    base = selected.rstrip(".")
    return [
        f"**Visual description:** {selected}",
        f"Candidate 2: {base}, usually best appreciated on a frontal chest radiograph.",
        f"On a chest radiograph, {cls.lower()} presents as a focal region with variable "
        "borders and density that differs from the surrounding lung fields.",
        f"```\n{base}, with margins that may be sharp or blurred.\n```",
        f"- {base} on imaging. Additional findings may include",
    ]


def main() -> None:
    data = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("data")
    fixtures = data / "fixtures"
    fixtures.mkdir(parents=True, exist_ok=True)

    write_json(data / "lexicons.json", {
        "version": 1, "kind": "attribute-lexicons",
        "attributes": {"shape": SHAPE, "density": DENSITY,
                       "intensity": INTENSITY, "location": LOCATION}})
    write_json(data / "vindr_definitions.json",
               [{"class_name": c, "definition": d, "source": s} for c, d, s, _ in VINDR])
    write_json(data / "padchest_definitions.json",
               [{"class_name": c, "definition": d, "source": "Radiopaedia"}
                for c, d, _ in PADCHEST])
    write_json(data / "vindr_dictionary.json",
               {"version": 1, "kind": "prompt-dictionary",
                "entries": {c: k for c, _, _, k in VINDR}})
    write_json(data / "padchest_dictionary.json",
               {"version": 1, "kind": "prompt-dictionary",
                "entries": {c: k for c, _, k in PADCHEST}})
    write_json(data / "padchest_classmap.json", {
        "known": PADCHEST_KNOWN,
        "unknown": [c for c, _, _ in PADCHEST if c not in PADCHEST_KNOWN]})

    header = ["image_id", "class_name", "x_min", "y_min", "x_max", "y_max",
              "width", "height", "rater_id"]
    vindr_classes = [c for c, _, _, _ in VINDR]
    rng = random.Random(20240611)
    train_rows, _ = build_split(rng, vindr_classes, 3, "vtr_", header)
    for i in range(4):
        train_rows.append([f"vtr_nf{i + 1:02d}", "No finding", "", "", "", "", 2000, 2500, "R1"])
    test_rows, _ = build_split(rng, vindr_classes, 2, "vte_", header)
    write_csv(fixtures / "vindr_train.csv", train_rows)
    write_csv(fixtures / "vindr_test.csv", test_rows)

    # known classes appear twice, never on the same image
    pad_classes = [c for c, _, _ in PADCHEST] + list(PADCHEST_KNOWN)
    pad_rows, _ = build_split(rng, pad_classes, 1, "pc_", header)
    write_csv(fixtures / "padchest_test.csv", pad_rows)

    write_csv(fixtures / "three_rows.csv", [
        header,
        ["img_a", "Cardiomegaly", 600, 900, 1500, 1650, 2000, 2500, "R1"],
        ["img_a", "Cardiomegaly", 606, 894, 1494, 1656, 2000, 2500, "R2"],
        ["img_b", "Pleural Effusion", 300, 1500, 900, 2100, 2500, 2500, "R1"],
    ])
    write_csv(fixtures / "invalid_rows.csv", [
        header,
        ["img_ok", "Atelectasis", 300, 300, 600, 600, 2000, 2000, "R1"],
        ["img_bad1", "Atelectasis", 700, 300, 600, 600, 2000, 2000, "R1"],
        ["img_bad2", "Atelectasis", "abc", 300, 600, 600, 2000, 2000, "R1"],
        ["img_bad3", "Atelectasis", 300, 300, 2600, 600, 2000, 2000, "R1"],
        ["img_bad4", "", 300, 300, 600, 600, 2000, 2000, "R1"],
        ["img_ok2", "Edema", 900, 900, 1200, 1300, 2000, 2000, "R2"],
    ])

    # Replay transcript: default generation params, seed 0.
    params = {"max_tokens": 1024, "n": 5, "repetition_penalty": 1.1,
              "temperature": 0.7, "top_p": 0.7}
    params_text = json.dumps(params, separators=(",", ":"), sort_keys=True)
    lines = []
    for cls, definition, _, selected in VINDR:
        if cls == "Lung Opacity":
            selected = LUNG_OPACITY_SELECTED
        prompt = f'{PROMPT_HEAD}{cls}: "{definition}"{PROMPT_TAIL}'
        for idx, text in enumerate(candidates_for(cls, selected)):
            seed = request_seed(0, cls, idx)
            material = "\x1f".join([cls, prompt, str(idx), params_text, str(seed)])
            key = f"{fnv1a64(material.encode()):016x}"
            lines.append(json.dumps({"key": key, "class_name": cls, "sample_index": idx,
                                     "response": text}, ensure_ascii=False))
    (fixtures / "vindr_transcript.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")


if __name__ == "__main__":
    main()
