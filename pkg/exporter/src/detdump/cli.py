"""detdump: batch-export scenes described by a recipe file.

    detdump --recipe recipe.json

writes one bundle directory per sample id under the recipe's out_dir.
Exit codes: 0 success, 1 recipe/export error, 2 bad flags.
"""

import argparse
import sys

from .export import ExportError, export_scene
from .recipe import ExportRecipe, RecipeError


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="detdump", description=__doc__)
    ap.add_argument("--recipe", required=True, help="ExportRecipe JSON path")
    args = ap.parse_args(argv)

    try:
        recipe = ExportRecipe.from_json(args.recipe)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    try:
        for sample_id in recipe.samples:
            out = export_scene(recipe, sample_id)
            print(out)
    except ExportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
