import json
import os
import random
import tempfile
import time
import tracemalloc
from typing import Any, Dict, Iterable, Iterator, List, Optional, Union

import joblib
import numpy as np
import pandas as pd
import yaml

from exceptions import InputError


def read_json_as_dict(input_path: str) -> Dict:
    """
    Reads a JSON (or YAML) file and returns its content as a dictionary.
    If input_path is a directory, the first JSON file in the directory is read.
    If input_path is a file, the file is read.

    Args:
        input_path (str): The path to the file or directory containing a JSON file.

    Returns:
        dict: The content of the file as a dictionary.

    Raises:
        FileNotFoundError: If the input_path does not exist.
        InputError: If a directory holds no JSON file or the content is not a mapping.
    """
    if os.path.isdir(input_path):
        json_files = sorted(
            os.path.join(input_path, f)
            for f in os.listdir(input_path)
            if f.endswith(".json")
        )
        if not json_files:
            raise InputError(f"No JSON files found in '{input_path}'")
        file_path = json_files[0]
    elif os.path.isfile(input_path):
        file_path = input_path
    else:
        raise FileNotFoundError(f"No such file or directory: '{input_path}'")

    with open(file_path, "r", encoding="utf-8") as file:
        if file_path.endswith((".yaml", ".yml")):
            data = yaml.safe_load(file) or {}
        else:
            data = json.load(file)
    if not isinstance(data, dict):
        raise InputError(f"Expected a mapping at the top level of '{file_path}'")
    return data


def read_jsonl(file_path: str) -> Iterator[tuple]:
    """
    Yields (line_number, parsed_object) for every non-blank line of a JSONL file.
    Lines that are not valid JSON are yielded as (line_number, exception).
    """
    with open(file_path, "r", encoding="utf-8") as file:
        for line_number, line in enumerate(file, start=1):
            if not line.strip():
                continue
            try:
                yield line_number, json.loads(line)
            except json.JSONDecodeError as exc:
                yield line_number, exc


def write_jsonl(file_path: str, records: Iterable[Dict]) -> None:
    """Writes one compact, key-sorted JSON object per line."""
    with open(file_path, "w", encoding="utf-8") as file:
        for record in records:
            file.write(
                json.dumps(record, sort_keys=True, default=make_serializable) + "\n"
            )


def set_seeds(seed_value: int) -> None:
    """
    Set the random seeds for Python, NumPy, etc. to ensure
    reproducibility of results.

    Args:
        seed_value (int): The seed value to use for random
            number generation. Must be an integer.

    Returns:
        None
    """
    if isinstance(seed_value, int):
        os.environ["PYTHONHASHSEED"] = str(seed_value)
        random.seed(seed_value)
        np.random.seed(seed_value)
    else:
        raise ValueError(f"Invalid seed value: {seed_value}. Cannot set seeds.")


def resolve_n_jobs(threads: Optional[int]) -> int:
    """Number of workers to use: the --threads cap, else all available cores."""
    if threads is None or threads <= 0:
        return max(1, joblib.cpu_count())
    return int(threads)


def chunk_bounds(n_items: int, n_chunks: int) -> List[tuple]:
    """Splits range(n_items) into at most n_chunks contiguous (start, stop) blocks."""
    n_chunks = max(1, min(n_chunks, n_items)) if n_items else 1
    edges = np.linspace(0, n_items, n_chunks + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def save_dataframe_as_csv(dataframe: pd.DataFrame, file_path: str) -> None:
    """
    Saves a pandas dataframe to a CSV file in the given directory path.

    Args:
    - dataframe (pd.DataFrame): The pandas dataframe to be saved.
    - file_path (str): File path and name to save the CSV file.

    Raises:
    - IOError: If an error occurs while saving the CSV file.
    """
    try:
        dataframe.to_csv(file_path, index=False, float_format="%.10g")
    except IOError as exc:
        raise IOError(f"Error saving CSV file: {exc}") from exc


def save_json(file_path_and_name: str, data: Any) -> None:
    """Save json to a path (directory + filename)"""
    with open(file_path_and_name, "w", encoding="utf-8") as file:
        json.dump(
            data,
            file,
            default=lambda o: make_serializable(o),
            sort_keys=True,
            indent=4,
            separators=(",", ": "),
        )
        file.write("\n")


def atomic_write_json(file_path: str, data: Any) -> None:
    """Writes JSON to a temp file in the target directory, then renames it into place."""
    directory = os.path.dirname(file_path) or "."
    fd, tmp_path = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as file:
            json.dump(data, file, sort_keys=True, default=make_serializable)
        os.replace(tmp_path, file_path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def make_serializable(obj: Any) -> Union[int, float, List[Union[int, float]], Any]:
    """
    Converts a given object into a serializable format.

    Args:
    - obj: Any Python object

    Returns:
    - If obj is an integer or numpy integer, returns the integer value as an int
    - If obj is a numpy floating-point number, returns the floating-point value
        as a float
    - If obj is a numpy array, returns the array as a list
    - If obj is a set, returns it as a sorted list
    - Otherwise, uses the default behavior of the json.JSONEncoder to serialize obj
    """
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    elif isinstance(obj, np.floating):
        return float(obj)
    elif isinstance(obj, np.bool_):
        return bool(obj)
    elif isinstance(obj, np.ndarray):
        return obj.tolist()
    elif isinstance(obj, (set, frozenset)):
        return sorted(obj)
    else:
        return json.JSONEncoder.default(None, obj)


def file_stem(file_path: str) -> str:
    """Dataset name used in reports: the file name without directory and extensions."""
    name = os.path.basename(file_path)
    return name.split(".")[0] if name else file_path


def ensure_dir(dir_path: str) -> str:
    os.makedirs(dir_path, exist_ok=True)
    return dir_path


class TimeAndMemoryTracker(object):
    """
    This class serves as a context manager to track time and
    memory allocated by code executed inside it.
    """

    def __init__(self, logger, track_memory: bool = True):
        self.logger = logger
        self.track_memory = track_memory
        self.elapsed_time = None
        self.peak_memory_mb = None

    def __enter__(self):
        if self.track_memory:
            tracemalloc.start()
        self.start_time = time.time()
        return self

    def __exit__(self, exc_type, exc_value, traceback):
        self.end_time = time.time()
        self.elapsed_time = self.end_time - self.start_time
        self.logger.info(f"Execution time: {self.elapsed_time:.2f} seconds")
        if self.track_memory:
            _, peak = tracemalloc.get_traced_memory()
            tracemalloc.stop()
            self.peak_memory_mb = peak / 1024**2
            self.logger.info(f"Memory allocated (peak): {self.peak_memory_mb:.2f} MB")
