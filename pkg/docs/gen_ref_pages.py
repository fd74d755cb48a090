"""Generate one API page per public module of the package."""

from pathlib import Path

import mkdocs_gen_files

PACKAGE = Path("pysplit")

nav = mkdocs_gen_files.Nav()

for source in sorted(PACKAGE.glob("*.py")):
    name = source.stem
    if name == "__main__":
        continue
    if name == "__init__":
        page = Path("index.md")
        identifier = PACKAGE.name
        nav[PACKAGE.name] = page.as_posix()
    else:
        page = Path(f"{name}.md")
        identifier = f"{PACKAGE.name}.{name}"
        nav[name] = page.as_posix()

    with mkdocs_gen_files.open(Path("api", page), mode="wt") as fd:
        print(f"::: {identifier}", file=fd)

    mkdocs_gen_files.set_edit_path(Path("api", page), Path("..") / source)

with mkdocs_gen_files.open("api/SUMMARY.md", "w") as nav_file:
    nav_file.writelines(nav.build_literate_nav())
