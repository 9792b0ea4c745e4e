#!/usr/bin/env python3
"""Prepend the Apache-2.0 header to C++ sources and CMake/shell files that lack it."""

import pathlib
import sys

HEADER = """Copyright 2026 The sedtune Authors

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License."""

DIRS = ["core", "tools", "tests", "benchmarks", "cmake"]
CXX = {".cpp", ".hpp", ".h", ".cc"}


def commented(prefix):
    return "\n".join((prefix + " " + line).rstrip() for line in HEADER.splitlines()) + "\n\n"


def main(root):
    changed = 0
    paths = [root / "CMakeLists.txt"] + [p for d in DIRS for p in sorted((root / d).rglob("*"))]
    for path in paths:
        if not path.is_file():
            continue
        if path.suffix in CXX:
            block = commented("//")
        elif path.name == "CMakeLists.txt" or path.suffix in {".cmake", ".sh", ".py", ".in"}:
            block = commented("#")
        else:
            continue
        text = path.read_text()
        if "Licensed under the Apache License" in text[:1200]:
            continue
        if text.startswith("#!"):
            shebang, _, rest = text.partition("\n")
            text = shebang + "\n" + block + rest
        else:
            text = block + text
        path.write_text(text)
        changed += 1
    print(f"added header to {changed} files")


if __name__ == "__main__":
    main(pathlib.Path(sys.argv[1] if len(sys.argv) > 1 else ".").resolve())
