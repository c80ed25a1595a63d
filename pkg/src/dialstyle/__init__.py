"""Dialogue semantic-style retrieval and style-knowledge aggregation engine."""

from .errors import (
    AlignError,
    BuildError,
    BundleError,
    ConfigError,
    DialstyleError,
    DimError,
    EvalError,
    FormatError,
    GraphError,
    LossError,
    SpeakerError,
    WeightsError,
)
from .kernel import cosine, matmul, matvec, mean_rows, softmax
from .types import BundleDims, DialogueEntry, DialogueMeta, EmbeddingBundle, Utterance, make_utterance
from .formats import (
    read_bundle_file,
    read_vector_file,
    read_weights_file,
    write_bundle_file,
    write_vector_file,
    write_weights_file,
)
from .sdssd import SdssdStore, SpeakerTable, build_store, dialogue_style_vec, load_store, save_store
from .retrieval import (
    AnPredictorWeights,
    RetrievalConfig,
    RetrievalHit,
    Scheme,
    predict_an_style,
    query_cd_vectors,
    recall_at,
    retrieve,
)
from .mghg import (
    Mghg,
    MghgEncoderWeights,
    build_mghg,
    dump_graph,
    encode_current_dialogue,
    encode_dialogue,
    hetero_message_pass,
)
from .styleagg import (
    AggregationInput,
    ContrastiveConfig,
    PipelineWeights,
    aggregate,
    batch_contrastive,
    contrastive_loss,
    export_fs_emb,
    sample_contrastive_ids,
    z_sweep,
)

__version__ = "0.1.0"
