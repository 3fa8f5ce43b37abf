#!/usr/bin/env python3
"""Convert a public image-captioning annotation file to the manifest schema.

Input: the usual single-JSON layout with {"images": [{"filename", "imgid",
"split", "sentences": [{"raw": ...}, ...]}]}. Output: {"items": [{"image_path",
"image_id", "captions", "split"}]} as consumed by the data pipeline. Images
themselves are not touched; pass --images-dir to prefix the stored paths.
"""

import argparse
import json
import sys
from pathlib import Path

MAX_CAPTIONS = 5
KNOWN_SPLITS = {"train", "val", "test"}


def convert(doc, images_dir, keep_splits):
    if "images" not in doc or not isinstance(doc["images"], list):
        raise ValueError("annotation file has no 'images' array")
    items = []
    for entry in doc["images"]:
        captions = [s["raw"].strip() for s in entry.get("sentences", []) if s.get("raw", "").strip()]
        if not captions:
            print(f"warning: skipping imgid {entry.get('imgid')} with no captions", file=sys.stderr)
            continue
        split = entry.get("split", "")
        if split == "valid":
            split = "val"
        if split not in KNOWN_SPLITS:
            split = ""
        items.append({
            "image_path": str(Path(images_dir) / entry["filename"]) if images_dir else entry["filename"],
            "image_id": int(entry["imgid"]),
            "captions": captions[:MAX_CAPTIONS],
            "split": split if keep_splits else "",
        })
    return {"items": items}


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("annotations", help="annotation JSON file (RSICD-style layout)")
    parser.add_argument("output", help="manifest JSON to write")
    parser.add_argument("--images-dir", default="", help="directory prefix for image paths")
    parser.add_argument("--drop-splits", action="store_true",
                        help="ignore preassigned splits so the pipeline reshuffles everything")
    args = parser.parse_args()

    with open(args.annotations, encoding="utf-8") as f:
        doc = json.load(f)
    manifest = convert(doc, args.images_dir, keep_splits=not args.drop_splits)
    with open(args.output, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2)
        f.write("\n")
    print(f"wrote {len(manifest['items'])} items to {args.output}")


if __name__ == "__main__":
    main()
