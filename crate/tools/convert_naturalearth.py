#!/usr/bin/env python3
"""Convert a Natural Earth polygon shapefile into the geoharm polygon JSON.

Usage: convert_naturalearth.py INPUT.shp OUTPUT.json [--digits N]

Every shape becomes one feature; every shapefile part becomes one ring.
Ring orientation is kept as stored (exteriors clockwise, holes
counter-clockwise). Requires pyshp.
"""

import argparse
import json

import shapefile


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("input")
    parser.add_argument("output")
    parser.add_argument("--digits", type=int, default=6)
    parser.add_argument("--name-field", default="name")
    args = parser.parse_args()

    reader = shapefile.Reader(args.input)
    fields = [f[0] for f in reader.fields[1:]]
    name_idx = fields.index(args.name_field) if args.name_field in fields else None

    features = []
    for shape_rec in reader.iterShapeRecords():
        shape = shape_rec.shape
        if shape.shapeType not in (shapefile.POLYGON, shapefile.POLYGONZ, shapefile.POLYGONM):
            continue
        starts = list(shape.parts) + [len(shape.points)]
        rings = []
        for a, b in zip(starts[:-1], starts[1:]):
            ring = [[round(x, args.digits), round(y, args.digits)] for x, y in shape.points[a:b]]
            if ring[0] != ring[-1]:
                ring.append(list(ring[0]))
            if len(ring) >= 4:
                rings.append(ring)
        if rings:
            name = shape_rec.record[name_idx] if name_idx is not None else str(len(features))
            features.append({"name": name, "rings": rings})

    doc = {"format": "geoharm-polygons", "version": 1, "features": features}
    with open(args.output, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, separators=(",", ":"), ensure_ascii=False)
        fh.write("\n")


if __name__ == "__main__":
    main()
