"""embedsafe: train an image embedder, then a distortion generator that
keeps embeddings close while moving pixels far, and evaluate the resulting
mock authentication system."""

from .distances import (
    ImageDistanceKind,
    combined_distance,
    distance_gradient,
    dssim_distance,
    embedding_distance,
    image_distance,
    l1_distance,
    l2_distance,
    sobel_distance,
    sobel_mask,
)
from .embedding import (
    EmbedderArch,
    EmbeddingNet,
    TripletTrainConfig,
    init_embedding,
    train_embedding,
    triplet_loss,
)
from .evaluation import (
    ConfusionMatrix,
    EvaluationReport,
    TemplateStore,
    build_auth_protocol,
    compute_eer,
    compute_metrics,
    distance_table,
    enroll,
    mock_auth_eval,
    pca_project,
    verify,
)
from .generator import (
    GeneratorNet,
    GeneratorTrainConfig,
    IdentityGenerator,
    UNetArch,
    distort,
    margin_sweep,
    train_generator,
    trainer_loss,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .mnist_data import (
    Dataset,
    Triplet,
    filter_by_classes,
    load_idx,
    sample_triplets,
    save_idx,
    subsample,
)

__version__ = "0.1.0"
