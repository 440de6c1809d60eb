from dataclasses import dataclass, field
from typing import Dict, Any, Optional, List, Type
from enum import Enum, auto
from datetime import datetime
import copy
import inspect
import logging
from abc import ABC
from uuid import uuid4
from cyclopref.utils import StorageBackend, FileSystemStorage

__version__ = "0.3.0"

logger = logging.getLogger(__name__)

_NODE_REGISTRY: Dict[str, Type["Node"]] = {}


class PipelineStatus(Enum):
    """Represents the overall status of a pipeline run."""

    HEALTHY = auto()
    COMPLETED = auto()
    FAILED = auto()


class NodeStatus(str, Enum):
    """Represents the outcome of a node."""

    COMPLETED = "completed"
    FAILED = "failed"


@dataclass
class ExecutionState:
    """Everything needed to pick a run up again."""

    shared: Dict[str, Any]
    next_node_id: Optional[str]
    pipeline_status: PipelineStatus
    node_statuses: Dict[str, NodeStatus] = field(default_factory=dict)
    previous_node_id: Optional[str] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict:
        result = {
            "shared": self.shared,
            "next_node_id": self.next_node_id,
            "pipeline_status": self.pipeline_status.name,
            "node_statuses": {k: v.value for k, v in self.node_statuses.items()},
            "previous_node_id": self.previous_node_id,
            "metadata": self.metadata,
        }
        # journaled steps must not share objects
        return copy.deepcopy(result)

    @classmethod
    def from_dict(cls, data: dict) -> "ExecutionState":
        data = copy.deepcopy(data)
        node_statuses = {k: NodeStatus(v) for k, v in data.get("node_statuses", {}).items()}
        return cls(
            shared=data["shared"],
            next_node_id=data["next_node_id"],
            pipeline_status=PipelineStatus[data["pipeline_status"]],
            node_statuses=node_statuses,
            previous_node_id=data.get("previous_node_id"),
            metadata=data.get("metadata", {}),
        )


class ConditionSetter:
    def __init__(self, from_node: "Node", condition: str):
        self.from_node = from_node
        self.condition = condition

    def __gt__(self, to_node: "Node") -> "Node":
        self.from_node.add_edge(
            Edge(from_id=self.from_node.id, to_id=to_node.id, condition=self.condition)
        )
        return to_node


class Node(ABC):
    """Base class for pipeline stages.

    `prepare(shared)` gathers inputs, `execute(prepared)` does the work and
    `cleanup(shared, prepared, result)` records results. Each phase may be
    a plain function or a coroutine.
    """

    def __init__(self, id: Optional[str] = None, config: Optional[Any] = None):
        self.id = id or f"{self.__class__.__name__}_{uuid4().hex[:8]}"
        self.type = self.__class__.__name__
        self.config = config
        self.edges: Dict[str, "Edge"] = {}

    def __init_subclass__(cls, **kwargs):
        """Auto-register nodes"""
        super().__init_subclass__(**kwargs)
        if not inspect.isabstract(cls):
            _NODE_REGISTRY[cls.__name__] = cls

    def get_next_node_id(self, state: ExecutionState) -> Optional[str]:
        for edge in self.edges.values():
            if edge.condition == "True":
                return edge.to_id
        default_edge = None
        for edge in self.edges.values():
            if edge.condition == "" and default_edge is None:
                default_edge = edge
            elif edge.condition and edge.should_transition(state):
                return edge.to_id
        return default_edge.to_id if default_edge else None

    def add_edge(self, edge: "Edge") -> None:
        self.edges[edge.to_id] = edge

    @classmethod
    def from_dict(cls, data: dict, config: Optional[Any] = None) -> "Node":
        """Create a registered node from `{"class": ..., "id": ...}`."""
        node_type = _NODE_REGISTRY.get(data["class"])
        if not node_type:
            raise ValueError(
                f"Unknown node type: {data['class']}. "
                f"Available types: {', '.join(sorted(_NODE_REGISTRY.keys()))}"
            )
        return node_type(id=data.get("id"), config=config)

    async def run(self, state: ExecutionState) -> None:
        try:
            prep_result = self.prepare(state.shared)
            prepared = await prep_result if inspect.isawaitable(prep_result) else prep_result

            result = self.execute(prepared)
            result = await result if inspect.isawaitable(result) else result

            cleanup_result = self.cleanup(state.shared, prepared, result)
            if inspect.isawaitable(cleanup_result):
                await cleanup_result

            state.node_statuses[self.id] = NodeStatus.COMPLETED

        except Exception as e:
            state.node_statuses[self.id] = NodeStatus.FAILED
            state.metadata.update({"error": type(e).__name__ + ": " + str(e)})
            raise

    def prepare(self, shared: Dict[str, Any]) -> Any:
        pass

    def execute(self, prepared: Any) -> Any:
        pass

    def cleanup(self, shared: Dict[str, Any], prepared: Any, result: Any) -> Any:
        pass

    async def run_standalone(self, shared_state: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
        """Run this node alone against `shared_state` and return it."""
        state = ExecutionState(
            shared=shared_state if shared_state is not None else {},
            next_node_id=None,
            pipeline_status=PipelineStatus.HEALTHY,
        )
        await self.run(state)
        return state.shared

    def __sub__(self, condition: str) -> "ConditionSetter":
        if not isinstance(condition, str):
            raise TypeError("Condition provided via '-' must be a string.")
        return ConditionSetter(self, condition)

    def __gt__(self, other: "Node") -> "Node":
        self.add_edge(Edge(from_id=self.id, to_id=other.id))
        return other


class Edge:
    def __init__(self, from_id: str, to_id: str, condition: str = ""):
        self.from_id = from_id
        self.to_id = to_id
        self.condition = condition

    def should_transition(self, state: ExecutionState) -> bool:
        try:
            return bool(
                eval(self.condition, {"__builtins__": __builtins__}, {"shared": state.shared})
            )
        except Exception as e:
            logger.warning("Error evaluating condition '%s': %s", self.condition, e)
            return False


class PipelineEngine:
    """Runs linked nodes one step at a time and journals every step.

    Pass the `run_id` of an earlier run to resume it, by default from its
    last journaled step.
    """

    def __init__(
        self,
        nodes: List[Node],
        start: Optional[Node] = None,
        pipeline_id: Optional[str] = None,
        run_id: Optional[str] = None,
        resume_from: Optional[int] = None,
        storage_backend: Optional[StorageBackend] = None,
        initial_shared_state: Optional[Dict[str, Any]] = None,
    ):
        if not nodes:
            raise ValueError("A pipeline needs at least one node")
        self.storage = storage_backend or FileSystemStorage()
        self.pipeline_id = pipeline_id or f"pipeline_{uuid4().hex[:8]}"
        self.nodes = {node.id: node for node in nodes}
        self.start_node_id = (start or nodes[0]).id

        if run_id:
            self.tracking_data = self.storage.load_state(self.pipeline_id, run_id)
            if not self.tracking_data:
                raise FileNotFoundError(f"No state found for run_id: {run_id}")

            steps = self.tracking_data["steps"]
            if resume_from is None:
                resume_from = len(steps) - 1
            if resume_from >= len(steps):
                raise ValueError(f"Step {resume_from} not found. Run has {len(steps)} steps.")

            self.execution_state = ExecutionState.from_dict(steps[resume_from])
            if self.execution_state.pipeline_status == PipelineStatus.FAILED:
                # retry the failed node
                self.execution_state.pipeline_status = PipelineStatus.HEALTHY
                self.execution_state.metadata.pop("error", None)
            self._validate_node_compatibility()

            self.run_id = run_id
            self.tracking_data["steps"] = steps[: resume_from + 1]
            self.current_step = resume_from
            logger.info("resuming run %s from step %d", run_id, resume_from)
        else:
            self.run_id = f"{datetime.now().strftime('%Y%m%d_%H%M%S_%f')[:-3]}"
            self.execution_state = ExecutionState(
                shared=initial_shared_state or {},
                next_node_id=self.start_node_id,
                pipeline_status=PipelineStatus.HEALTHY,
                metadata={"save_time": datetime.now().isoformat(), "step": 0},
            )
            self.tracking_data = {
                "pipeline_id": self.pipeline_id,
                "run_id": self.run_id,
                "steps": [self.execution_state.to_dict()],
            }
            self.current_step = 0
        self.storage.save_state(self.pipeline_id, self.run_id, self.tracking_data)

    def save_state(self) -> None:
        """Append the current state to the journal."""
        self.current_step += 1
        self.execution_state.metadata.update(
            {"save_time": datetime.now().isoformat(), "step": self.current_step}
        )
        self.tracking_data["steps"].append(self.execution_state.to_dict())
        self.storage.save_state(self.pipeline_id, self.run_id, self.tracking_data)

    async def step(self) -> bool:
        """Run the next node; returns whether there is more to run."""
        if (
            not self.execution_state.next_node_id
            or self.execution_state.pipeline_status != PipelineStatus.HEALTHY
        ):
            return False

        current_node_id = self.execution_state.next_node_id
        try:
            node = copy.copy(self.nodes[current_node_id])
            logger.debug("running node %s", current_node_id)
            await node.run(self.execution_state)

            self.execution_state.previous_node_id = current_node_id
            self.execution_state.next_node_id = node.get_next_node_id(self.execution_state)
            if not self.execution_state.next_node_id:
                self.execution_state.pipeline_status = PipelineStatus.COMPLETED
            self.save_state()
            return self.execution_state.pipeline_status != PipelineStatus.COMPLETED

        except Exception:
            self.execution_state.pipeline_status = PipelineStatus.FAILED
            self.save_state()
            raise

    def _validate_node_compatibility(self) -> None:
        """Validate that the nodes a journaled state points at still exist."""
        previous = self.execution_state.previous_node_id
        if previous:
            if previous not in self.nodes:
                raise ValueError(f"Cannot resume: Previous node '{previous}' is missing from current pipeline")
            self.execution_state.next_node_id = self.nodes[previous].get_next_node_id(
                self.execution_state
            )
        elif self.execution_state.next_node_id not in self.nodes:
            raise ValueError(
                f"Cannot resume: Current node '{self.execution_state.next_node_id}' is missing from current pipeline"
            )

    async def run(self) -> PipelineStatus:
        while await self.step():
            pass
        return self.execution_state.pipeline_status
