# Copyright 2026 The pcbm Authors.
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
"""Python access to the pcbm toolkit.

The heavy lifting lives in the C++ extension; this package re-exports it.
"""

from ._pcbm import (
    ArgumentError,
    Error,
    FormatError,
    IntegrityError,
    UndefinedMetricError,
    ValidationError,
    auroc,
    average_precision,
    fnv1a64,
    load_dataset,
    load_named_vectors,
    project,
    read_emb1,
    run_cli,
    save_dataset,
    save_named_vectors,
    write_emb1,
)

__all__ = [
    "ArgumentError",
    "Error",
    "FormatError",
    "IntegrityError",
    "UndefinedMetricError",
    "ValidationError",
    "auroc",
    "average_precision",
    "fnv1a64",
    "load_dataset",
    "load_named_vectors",
    "project",
    "read_emb1",
    "run_cli",
    "save_dataset",
    "save_named_vectors",
    "write_emb1",
]
