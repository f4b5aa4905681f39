from spvd.diffusion.embedding import class_embedding, combine_embeddings, time_embedding
from spvd.diffusion.process import Denoiser, forward_sample, q_step, training_loss
from spvd.diffusion.samplers import ddim_step, ddim_timesteps, ddpm_step, sample
from spvd.diffusion.schedule import NoiseSchedule, make_linear_schedule
