potential_choices = [
        ('zero_potential', 'Zero potential'),
        ('gaussian_well', 'Gaussian well'),
        ('yukawa_regularized', 'Yukawa with smoothed core'),
        ('lorentzian_tail', 'Lorentzian tail'),
]

source_choices = [
        ('gaussian_source', 'Gaussian source'),
        ('point_source', 'Point-like source'),
        ('shell_source', 'Gaussian shell source'),
        ('power_law_source', 'Power-law source'),
]

potential_list = [potential[0] for potential in potential_choices]

source_list = [source[0] for source in source_choices]

direction_rule_choices = [
        ('octahedral', 'Octahedral sphere rule'),
        ('product', 'Gauss-Legendre x uniform phi'),
]

octahedral_sizes = [6, 14, 26, 50, 110]
