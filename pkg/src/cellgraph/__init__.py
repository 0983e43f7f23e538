"""cellgraph: a dependency-graph engine for computational notebooks.

Externalizes the analyst's mental model as a persisted DAG over cells,
tracks variable provenance and execution state, derives task-relevant LLM
context from the graph, and assembles prompts — as a library, a CLI, and an
HTTP service with a live event stream.
"""

from .analysis import (
    DefUseRecord,
    VariableIndex,
    VariableRecord,
    VarState,
    analyze_cell,
    build_variable_index,
    variable_status,
)
from .context import (
    ContextMaterial,
    ContextSelection,
    TaskType,
    edit_selection,
    resolve_material,
    suggest_context,
    validate_selection,
)
from .gateway import (
    LlmRequest,
    LlmResponse,
    OpenAICompatAdapter,
    ReplayAdapter,
    apply_response,
    request_hash,
    send,
)
from .graph import (
    ExecStatus,
    GraphState,
    Link,
    Node,
    add_link,
    create_linked_node,
    delete_cell,
    execution_path,
    from_notebook,
    hover_info,
    node_status,
    remove_link,
    to_metadata,
)
from .notebook import (
    Cell,
    GraphMetadata,
    Notebook,
    Output,
    ensure_cell_ids,
    load_notebook,
    read_graph_metadata,
    save_notebook,
    source_hash,
    write_graph_metadata,
)
from .prompts import (
    PromptBundle,
    assemble,
    diff_changed_lines,
    header_comment,
    render_system_instruction,
    render_user_message,
)
from .session import (
    CellRunResult,
    KernelAdapter,
    MockKernel,
    Session,
    VariableSchema,
    mock_kernel_from_fixture,
)

__version__ = "0.1.0"
