experiment_kind_choices = [
        ('cross-section', 'Amplitude and cross-section tables'),
        ('convergence-D', 'Spherical incidence converging to plane-wave scattering'),
        ('limiting-amplitude', 'Driven time evolution against the stationary limit'),
        ('flux-check', 'Flux-based cross section and surface flux convergence'),
        ('oracle-compare', 'Partial-wave oracle against the grid solver'),
        ('hypothesis-check', 'Decay and Wiener conditions on potential and source'),
]

experiment_kind_list = [kind[0] for kind in experiment_kind_choices]

kinds_requiring_source = ['convergence-D', 'limiting-amplitude', 'hypothesis-check']

solver_method_choices = [
        ('auto', 'Direct below the size limit, Krylov above'),
        ('direct', 'Dense LU factorization'),
        ('krylov', 'Restarted GMRES'),
        ('born', 'Born series with Krylov fallback'),
]
