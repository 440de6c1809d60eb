from abc import ABC, abstractmethod
from typing import Dict, Optional, List
import os
from dill import dump, load


class StorageBackend(ABC):
    """Abstract base class for run-journal storage backends."""

    @abstractmethod
    def save_state(self, pipeline_id: str, run_id: str, save_data: dict) -> None:
        """Save the journal of a run."""
        pass

    @abstractmethod
    def load_state(self, pipeline_id: str, run_id: str) -> Optional[Dict]:
        """Load the journal of a run."""
        pass

    def list_runs(self, pipeline_id: str) -> List[str]:
        """List all runs of a pipeline, newest first."""
        return []

    def list_pipelines(self) -> List[str]:
        """List all pipelines with journaled runs."""
        return []


class FileSystemStorage(StorageBackend):
    """Journal files pickled with dill under `<base_dir>/<pipeline_id>/<run_id>/state.pkl`."""

    def __init__(self, base_dir: str = "runs"):
        self.base_dir = base_dir

    def _state_file(self, pipeline_id: str, run_id: str) -> str:
        return os.path.join(self.base_dir, pipeline_id, run_id, "state.pkl")

    def save_state(self, pipeline_id: str, run_id: str, save_data: dict) -> None:
        state_file = self._state_file(pipeline_id, run_id)
        os.makedirs(os.path.dirname(state_file), exist_ok=True)
        with open(state_file, "wb") as f:
            dump(save_data, f)

    def load_state(self, pipeline_id: str, run_id: str) -> Optional[Dict]:
        state_file = self._state_file(pipeline_id, run_id)
        if not os.path.exists(state_file):
            return None

        with open(state_file, "rb") as f:
            return load(f)

    def list_runs(self, pipeline_id: str) -> List[str]:
        pipeline_dir = os.path.join(self.base_dir, pipeline_id)
        if not os.path.exists(pipeline_dir):
            return []

        run_ids = [
            d for d in os.listdir(pipeline_dir) if os.path.isdir(os.path.join(pipeline_dir, d))
        ]
        run_ids.sort(reverse=True)
        return run_ids

    def list_pipelines(self) -> List[str]:
        if not os.path.exists(self.base_dir):
            return []
        return sorted(
            d for d in os.listdir(self.base_dir) if os.path.isdir(os.path.join(self.base_dir, d))
        )
