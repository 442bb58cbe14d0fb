from clada.graph.graph import create_workflow_graph, run_validation

graph_builder = create_workflow_graph()

__all__ = ["create_workflow_graph", "graph_builder", "run_validation"]
