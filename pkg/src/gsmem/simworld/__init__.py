"""Deterministic synthetic environment: scenes, ray-cast RGB-D, detector, embeddings, scripted oracle."""
from .oracle import NullOracle, ScriptedOracle, goal_question, parse_target, qa_question
from .render import render_ground_truth, scene_primitives
from .scene import SceneFormatError, SceneObject, SceneSpec, generate_scene, load_scene, save_scene
from .sensors import SyntheticEmbedder, detect, embed
from .world import World, WorldConfig, step_agent

__all__ = [
    "NullOracle", "ScriptedOracle", "goal_question", "parse_target", "qa_question",
    "render_ground_truth", "scene_primitives",
    "SceneFormatError", "SceneObject", "SceneSpec", "generate_scene", "load_scene", "save_scene",
    "SyntheticEmbedder", "detect", "embed", "World", "WorldConfig", "step_agent",
]
